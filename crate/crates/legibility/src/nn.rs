//! A minimal dense network: goal-relative input layer, ReLU hidden layers,
//! linear scalar output, exact reverse-mode gradients, RMSprop and Adam.
//!
//! The network always maps a 3-vector (a trajectory point expressed relative
//! to a goal, `r - g`) to a single scalar. Batched entry points take one row
//! per `(point, goal)` pair so that a whole batch runs as a few GEMMs.

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::Point3;
use crate::{Error, Result};

/// Input dimension of the value/reward network: the goal-relative point.
pub const INPUT_DIM: usize = 3;

/// Floating-point element type for network parameters and activations.
pub trait Scalar:
    LinalgScalar + Float + FromPrimitive + ToPrimitive + ScalarOperand + Send + Sync + 'static
{
    const PRECISION: &'static str;
}

impl Scalar for f32 {
    const PRECISION: &'static str = "f32";
}

impl Scalar for f64 {
    const PRECISION: &'static str = "f64";
}

/// Hidden layer widths. The input is always 3 (`r - g`) and the output 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub widths: Vec<usize>,
}

impl LayerSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        assert!(!widths.is_empty() && widths.iter().all(|&w| w > 0));
        LayerSpec { widths }
    }

    /// Full layer dimensions including input and scalar output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.widths.len() + 2);
        d.push(INPUT_DIM);
        d.extend_from_slice(&self.widths);
        d.push(1);
        d
    }
}

/// Dense network parameters. `weights[l]` has shape `(in, out)` so a batch
/// `X (B×in)` advances as `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

/// Parameter-shaped buffers: gradients, optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub w: Vec<Array2<T>>,
    pub b: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Gradients {
            w: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for w in &mut self.w {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.b {
            b.mapv_inplace(|v| v * factor);
        }
    }
}

/// Activations retained by a forward pass for the matching backward pass.
/// `acts[0]` is the input batch; `acts[l]` (l ≥ 1) the post-ReLU output of
/// layer l (post-linear for the final layer).
pub struct Cache<T: Scalar> {
    acts: Vec<Array2<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// He initialization: weights from Normal(0, sqrt(2 / fan_in)), biases
    /// zero. Samples are drawn in f64 in a fixed order, so the result is
    /// fully determined by the rng state.
    pub fn init<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Self {
        let dims = spec.dims();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).unwrap();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                T::from_f64(normal.sample(rng)).unwrap()
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Mlp { weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1]
            .iter()
            .map(|w| w.ncols())
            .collect()
    }

    /// Forward pass over a batch of goal-relative input rows (B×3).
    /// Returns the B scalar outputs and the activation cache.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> (Array1<T>, Cache<T>) {
        assert_eq!(x.ncols(), INPUT_DIM, "input rows must be 3-vectors");
        let n = self.n_layers();
        let mut acts: Vec<Array2<T>> = Vec::with_capacity(n + 1);
        acts.push(x.to_owned());
        for l in 0..n {
            let mut z = acts[l].dot(&self.weights[l]);
            let bias = self.biases[l]
                .broadcast(z.raw_dim())
                .expect("bias broadcasts over the batch");
            if l < n - 1 {
                // fused bias + ReLU: one pass over the batch
                Zip::from(&mut z).and(bias).for_each(|v, &b| {
                    let s = *v + b;
                    *v = if s > T::zero() { s } else { T::zero() };
                });
            } else {
                Zip::from(&mut z).and(bias).for_each(|v, &b| *v = *v + b);
            }
            acts.push(z);
        }
        let out = acts[n].column(0).to_owned();
        (out, Cache { acts })
    }

    /// Scalar value of moving through `r` toward goal `g`. The goal-relative
    /// first layer feeds `r - g` into the dense stack, so a joint translation
    /// of `r` and `g` cannot change the result.
    pub fn value_forward(&self, r: &Point3, g: &Point3) -> (T, Cache<T>) {
        let d = r.sub(g);
        let x = Array2::from_shape_fn((1, INPUT_DIM), |(_, j)| T::from_f64(d[j]).unwrap());
        let (out, cache) = self.forward_batch(x.view());
        (out[0], cache)
    }

    /// Reverse-mode gradients of `sum_b upstream[b] * output[b]` with respect
    /// to every weight and bias. ReLU subgradient at 0 is 0.
    pub fn backward_batch(&self, cache: &Cache<T>, upstream: &Array1<T>) -> Result<Gradients<T>> {
        let n = self.n_layers();
        let batch = cache.acts[0].nrows();
        if upstream.len() != batch {
            return Err(Error::ShapeMismatch(format!(
                "upstream length {} vs batch {}",
                upstream.len(),
                batch
            )));
        }
        let mut dw = vec![Array2::zeros((0, 0)); n];
        let mut db = vec![Array1::zeros(0); n];
        let mut delta: Array2<T> =
            upstream.view().insert_axis(Axis(1)).to_owned();
        for l in (0..n).rev() {
            // `.t().dot()` can yield reversed strides; normalize the layout.
            dw[l] = cache.acts[l].t().dot(&delta).as_standard_layout().to_owned();
            db[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                Zip::from(&mut prev).and(&cache.acts[l]).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = prev;
            }
        }
        Ok(Gradients { w: dw, b: db })
    }

    /// Backward for a single `value_forward` call.
    pub fn value_backward(&self, cache: &Cache<T>, upstream: T) -> Result<Gradients<T>> {
        self.backward_batch(cache, &ndarray::arr1(&[upstream]))
    }
}

fn check_shapes<T: Scalar>(params: &Mlp<T>, grads: &Gradients<T>) -> Result<()> {
    let ok = params.weights.len() == grads.w.len()
        && params
            .weights
            .iter()
            .zip(&grads.w)
            .all(|(p, g)| p.raw_dim() == g.raw_dim())
        && params
            .biases
            .iter()
            .zip(&grads.b)
            .all(|(p, g)| p.raw_dim() == g.raw_dim());
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch("gradient shapes do not match parameters".into()))
    }
}

/// RMSprop with optional momentum:
/// `v ← ρ·v + (1−ρ)·g²; step ← lr·g / (sqrt(v) + eps); m ← momentum·m + step;
/// param ← param − m`.
///
/// eps sits outside the square root: the per-parameter gradients here carry
/// a 1/(n_points·batch) factor, so sqrt(v) is routinely below 1e-4 and an
/// in-root eps would swamp it and stall the updates.
#[derive(Debug, Clone)]
pub struct RmsProp<T: Scalar> {
    pub lr: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    v: Gradients<T>,
    m: Gradients<T>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(params: &Mlp<T>, lr: f64, rho: f64, momentum: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            rho,
            momentum,
            eps,
            v: Gradients::zeros_like(params),
            m: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        check_shapes(params, grads)?;
        let (lr, rho, mom, eps) = (
            T::from_f64(self.lr).unwrap(),
            T::from_f64(self.rho).unwrap(),
            T::from_f64(self.momentum).unwrap(),
            T::from_f64(self.eps).unwrap(),
        );
        let one = T::one();
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&grads.w[l])
                .and(&mut self.v.w[l])
                .and(&mut self.m.w[l])
                .for_each(|p, &g, v, m| {
                    *v = rho * *v + (one - rho) * g * g;
                    let step = lr * g / ((*v).sqrt() + eps);
                    *m = mom * *m + step;
                    *p = *p - *m;
                });
            Zip::from(&mut params.biases[l])
                .and(&grads.b[l])
                .and(&mut self.v.b[l])
                .and(&mut self.m.b[l])
                .for_each(|p, &g, v, m| {
                    *v = rho * *v + (one - rho) * g * g;
                    let step = lr * g / ((*v).sqrt() + eps);
                    *m = mom * *m + step;
                    *p = *p - *m;
                });
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Mlp<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        check_shapes(params, grads)?;
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - b1.powi(t))).unwrap();
        let corr2 = T::from_f64(1.0 / (1.0 - b2.powi(t))).unwrap();
        let (lr, b1, b2, eps) = (
            T::from_f64(self.lr).unwrap(),
            T::from_f64(b1).unwrap(),
            T::from_f64(b2).unwrap(),
            T::from_f64(self.eps).unwrap(),
        );
        let one = T::one();
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&grads.w[l])
                .and(&mut self.m.w[l])
                .and(&mut self.v.w[l])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p = *p - lr * (*m * corr1) / ((*v * corr2).sqrt() + eps);
                });
            Zip::from(&mut params.biases[l])
                .and(&grads.b[l])
                .and(&mut self.m.b[l])
                .and(&mut self.v.b[l])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p = *p - lr * (*m * corr1) / ((*v * corr2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Compare analytic gradients against central finite differences on random
/// small networks; returns the worst relative error over all parameters and
/// trials. Runs at f64.
pub fn grad_check<R: Rng>(spec: &LayerSpec, rng: &mut R, n_trials: usize) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_trials {
        let mut mlp: Mlp<f64> = Mlp::init(spec, rng);
        let r = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let g = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let (_, cache) = mlp.value_forward(&r, &g);
        let analytic = mlp.value_backward(&cache, 1.0).unwrap();

        for l in 0..mlp.weights.len() {
            for idx in 0..mlp.weights[l].len() {
                let orig = mlp.weights[l].as_slice().unwrap()[idx];
                mlp.weights[l].as_slice_mut().unwrap()[idx] = orig + h;
                let plus = mlp.value_forward(&r, &g).0;
                mlp.weights[l].as_slice_mut().unwrap()[idx] = orig - h;
                let minus = mlp.value_forward(&r, &g).0;
                mlp.weights[l].as_slice_mut().unwrap()[idx] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.w[l].as_slice().unwrap()[idx];
                worst = worst.max(rel_err(a, numeric));
            }
            for idx in 0..mlp.biases[l].len() {
                let orig = mlp.biases[l][idx];
                mlp.biases[l][idx] = orig + h;
                let plus = mlp.value_forward(&r, &g).0;
                mlp.biases[l][idx] = orig - h;
                let minus = mlp.value_forward(&r, &g).0;
                mlp.biases[l][idx] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                worst = worst.max(rel_err(analytic.b[l][idx], numeric));
            }
        }
    }
    worst
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

// --- serialization ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerJson {
    w: Vec<f64>,
    b: Vec<f64>,
}

/// On-disk network form: `{"widths": [...], "precision": "...",
/// "layers": [{"w": [row-major floats], "b": [...]}, ...]}`.
#[derive(Serialize, Deserialize)]
pub struct MlpJson {
    pub widths: Vec<usize>,
    pub precision: String,
    layers: Vec<LayerJson>,
}

impl<T: Scalar> Mlp<T> {
    pub fn to_json(&self) -> MlpJson {
        MlpJson {
            widths: self.widths(),
            precision: T::PRECISION.to_string(),
            layers: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| LayerJson {
                    w: w.iter().map(|v| v.to_f64().unwrap()).collect(),
                    b: b.iter().map(|v| v.to_f64().unwrap()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &MlpJson) -> Result<Self> {
        let spec = LayerSpec::new(json.widths.clone());
        let dims = spec.dims();
        if json.layers.len() != dims.len() - 1 {
            return Err(Error::ShapeMismatch("layer count mismatch in model file".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, layer) in json.layers.iter().enumerate() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            if layer.w.len() != fan_in * fan_out || layer.b.len() != fan_out {
                return Err(Error::ShapeMismatch(format!("layer {l} size mismatch")));
            }
            let w = Array2::from_shape_vec(
                (fan_in, fan_out),
                layer.w.iter().map(|&v| T::from_f64(v).unwrap()).collect(),
            )
            .unwrap();
            weights.push(w);
            biases.push(Array1::from_vec(
                layer.b.iter().map(|&v| T::from_f64(v).unwrap()).collect(),
            ));
        }
        Ok(Mlp { weights, biases })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = LayerSpec::new(vec![4]);
        let a: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let b: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_weight_std_matches_fan_in() {
        let spec = LayerSpec::new(vec![1536, 4]);
        let mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        // first layer: fan_in 3, 3*1536 = 4608 samples; use second layer
        // (fan_in 1536) for a bigger sample.
        let w = &mlp.weights[1];
        let n = w.len() as f64;
        let mean: f64 = w.iter().sum::<f64>() / n;
        let var: f64 = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = (2.0 / 1536.0f64).sqrt();
        assert!(
            (var.sqrt() - expected).abs() / expected < 0.05,
            "std {} vs {}",
            var.sqrt(),
            expected
        );
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = LayerSpec::new(vec![4]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(2));
        for w in &mut mlp.weights {
            w.fill(0.0);
        }
        let (v, _) = mlp.value_forward(&Point3::new(0.3, -0.2, 0.9), &Point3::new(0.0, 0.1, 0.0));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn tiny_network_matches_hand_evaluation() {
        // widths (2,): dims 3 -> 2 -> 1, hand-set weights.
        let spec = LayerSpec::new(vec![2]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        mlp.weights[0] = ndarray::arr2(&[[1.0, -1.0], [0.5, 0.5], [0.0, 2.0]]);
        mlp.biases[0] = ndarray::arr1(&[0.1, -0.1]);
        mlp.weights[1] = ndarray::arr2(&[[2.0], [3.0]]);
        mlp.biases[1] = ndarray::arr1(&[0.25]);
        let r = Point3::new(1.0, 2.0, 3.0);
        let g = Point3::new(0.0, 1.0, 4.0);
        // input = r - g = (1, 1, -1)
        // h1 = relu(1*1 + 1*0.5 + (-1)*0 + 0.1) = 1.6
        // h2 = relu(-1 + 0.5 - 2 - 0.1) = 0
        // out = 2*1.6 + 3*0 + 0.25 = 3.45
        let (v, _) = mlp.value_forward(&r, &g);
        assert!((v - 3.45).abs() < 1e-12);
    }

    #[test]
    fn translation_invariance_is_exact() {
        let spec = LayerSpec::new(vec![8, 4]);
        let mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        // dyadic coordinates and offsets so r + c and g + c round exactly
        let r = Point3::new(0.25, -0.5, 0.75);
        let g = Point3::new(0.125, 0.375, -0.25);
        let c = [2.0, -4.5, 8.25];
        let (v0, _) = mlp.value_forward(&r, &g);
        let (v1, _) = mlp.value_forward(&r.translate(c), &g.translate(c));
        assert_eq!(v0.to_bits(), v1.to_bits());
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let spec = LayerSpec::new(vec![8, 4]);
        let mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(6));
        let (_, cache) = mlp.value_forward(&Point3::new(0.1, 0.2, 0.3), &Point3::new(0.0, 0.0, 0.0));
        let g0 = mlp.value_backward(&cache, 0.0).unwrap();
        let g1 = mlp.value_backward(&cache, 1.0).unwrap();
        let g2 = mlp.value_backward(&cache, 2.0).unwrap();
        for l in 0..g0.w.len() {
            assert!(g0.w[l].iter().all(|&v| v == 0.0));
            for (a, b) in g1.w[l].iter().zip(g2.w[l].iter()) {
                assert_eq!(2.0 * a, *b);
            }
        }
    }

    #[test]
    fn grad_check_small_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let err = grad_check(&LayerSpec::new(vec![8, 4]), &mut rng, 20);
        assert!(err <= 1e-4, "grad check error {err}");
        let err = grad_check(&LayerSpec::new(vec![1]), &mut rng, 20);
        assert!(err <= 1e-6, "near-linear grad check error {err}");
    }

    #[test]
    fn grad_check_detects_corruption() {
        // A deliberately wrong backward must produce a large discrepancy.
        let spec = LayerSpec::new(vec![8, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mlp: Mlp<f64> = Mlp::init(&spec, &mut rng);
        let r = Point3::new(0.5, 0.2, -0.3);
        let g = Point3::new(0.0, 0.0, 0.0);
        let (_, cache) = mlp.value_forward(&r, &g);
        let mut grads = mlp.value_backward(&cache, 1.0).unwrap();
        grads.w[0].mapv_inplace(|v| v * 1.5 + 0.01); // corrupt
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut m = mlp.clone();
        for idx in 0..m.weights[0].len() {
            let orig = m.weights[0].as_slice().unwrap()[idx];
            m.weights[0].as_slice_mut().unwrap()[idx] = orig + h;
            let plus = m.value_forward(&r, &g).0;
            m.weights[0].as_slice_mut().unwrap()[idx] = orig - h;
            let minus = m.value_forward(&r, &g).0;
            m.weights[0].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(grads.w[0].as_slice().unwrap()[idx], numeric));
        }
        assert!(worst > 1e-2, "corrupted gradient not detected: {worst}");
    }

    #[test]
    fn rmsprop_hand_evaluated_step() {
        let spec = LayerSpec::new(vec![1]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(8));
        for w in &mut mlp.weights {
            w.fill(1.0);
        }
        let before = mlp.weights[0][[0, 0]];
        let mut grads = Gradients::zeros_like(&mlp);
        for g in &mut grads.w {
            g.fill(1.0);
        }
        let mut opt = RmsProp::new(&mlp, 0.005, 0.9, 0.0, 1e-7);
        opt.step(&mut mlp, &grads).unwrap();
        // v = 0.1, step = .005 / (sqrt(0.1) + 1e-7)
        let expected = 0.005 / (0.1f64.sqrt() + 1e-7);
        let moved = before - mlp.weights[0][[0, 0]];
        assert!((moved - expected).abs() < 1e-12, "step {moved} vs {expected}");
    }

    #[test]
    fn rmsprop_zero_grad_is_noop() {
        let spec = LayerSpec::new(vec![4]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        let snapshot = mlp.clone();
        let grads = Gradients::zeros_like(&mlp);
        let mut opt = RmsProp::new(&mlp, 0.005, 0.9, 0.0, 1e-7);
        opt.step(&mut mlp, &grads).unwrap();
        assert_eq!(mlp, snapshot);
    }

    #[test]
    fn rmsprop_momentum_accumulates() {
        let spec = LayerSpec::new(vec![1]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(10));
        let mut grads = Gradients::zeros_like(&mlp);
        for g in &mut grads.w {
            g.fill(1.0);
        }
        let mut opt = RmsProp::new(&mlp, 0.005, 0.9, 0.5, 1e-7);
        let p0 = mlp.weights[0][[0, 0]];
        opt.step(&mut mlp, &grads).unwrap();
        let p1 = mlp.weights[0][[0, 0]];
        opt.step(&mut mlp, &grads).unwrap();
        let p2 = mlp.weights[0][[0, 0]];
        assert!((p1 - p2).abs() > (p0 - p1).abs());
    }

    #[test]
    fn adam_first_step_magnitude() {
        let spec = LayerSpec::new(vec![1]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(11));
        let before = mlp.weights[0][[0, 0]];
        let mut grads = Gradients::zeros_like(&mlp);
        for g in &mut grads.w {
            g.fill(1.0);
        }
        let mut opt = Adam::new(&mlp, 0.005, 0.9, 0.999, 1e-8);
        opt.step(&mut mlp, &grads).unwrap();
        // first step: m_hat = 1, v_hat = 1 -> displacement = lr / (1 + eps)
        let expected = 0.005 / (1.0 + 1e-8);
        let moved = before - mlp.weights[0][[0, 0]];
        assert!((moved - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let spec = LayerSpec::new(vec![4]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(12));
        let snapshot = mlp.clone();
        let grads = Gradients::zeros_like(&mlp);
        let mut opt = Adam::new(&mlp, 0.005, 0.9, 0.999, 1e-8);
        opt.step(&mut mlp, &grads).unwrap();
        assert_eq!(mlp, snapshot);
    }

    #[test]
    fn adam_constant_gradient_keeps_direction() {
        let spec = LayerSpec::new(vec![1]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(13));
        let mut grads = Gradients::zeros_like(&mlp);
        for g in &mut grads.w {
            g.fill(1.0);
        }
        let mut opt = Adam::new(&mlp, 0.005, 0.9, 0.999, 1e-8);
        let mut prev = mlp.weights[0][[0, 0]];
        for _ in 0..5 {
            opt.step(&mut mlp, &grads).unwrap();
            let cur = mlp.weights[0][[0, 0]];
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn final_layer_is_positively_homogeneous() {
        let spec = LayerSpec::new(vec![8]);
        let mut mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(14));
        let r = Point3::new(0.4, 0.1, -0.2);
        let g = Point3::new(0.0, 0.0, 0.0);
        let (v0, _) = mlp.value_forward(&r, &g);
        let last = mlp.weights.len() - 1;
        mlp.weights[last].mapv_inplace(|v| v * 2.0);
        mlp.biases[last].mapv_inplace(|v| v * 2.0);
        let (v1, _) = mlp.value_forward(&r, &g);
        assert_eq!(v1, 2.0 * v0);
    }

    #[test]
    fn roundtrip_through_json() {
        let spec = LayerSpec::new(vec![8, 4]);
        let mlp: Mlp<f64> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(15));
        let json = serde_json::to_string(&mlp.to_json()).unwrap();
        let parsed: MlpJson = serde_json::from_str(&json).unwrap();
        let back: Mlp<f64> = Mlp::from_json(&parsed).unwrap();
        assert_eq!(mlp, back);
    }

    #[test]
    fn batched_and_single_agree() {
        let spec = LayerSpec::new(vec![16, 8]);
        let mlp: Mlp<f32> = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(16));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let x = Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j] as f32);
        let (batched, _) = mlp.forward_batch(x.view());
        for (i, row) in rows.iter().enumerate() {
            let (single, _) = mlp.value_forward(
                &Point3::new(row[0], row[1], row[2]),
                &Point3::new(0.0, 0.0, 0.0),
            );
            let denom = single.abs().max(batched[i].abs()).max(1e-3);
            assert!(
                (single - batched[i]).abs() / denom < 1e-6,
                "batched {} vs single {}",
                batched[i],
                single
            );
        }
    }
}
