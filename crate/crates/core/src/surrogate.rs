//! Differentiable fingerprint surrogate.
//!
//! Solving and certification evaluate the fingerprint map and its Jacobian
//! thousands of times; running the full simulation each time is wasteful
//! and its finite-difference Jacobian is noisy. The pipeline here replaces
//! it with a small multilayer perceptron:
//!
//! 1. [`epg_dictionary`] simulates an exact (untruncated) dictionary on a
//!    dense log-log grid of (T1, T2) pairs.
//! 2. [`fit_subspace`] finds the dominant τ-dimensional subspace of the
//!    dictionary from the T×T Gram matrix; fingerprints and data are
//!    compressed by projecting onto its basis.
//! 3. [`train_surrogate`] fits an MLP (ln θ, affinely scaled to [0, 1]² →
//!    hidden ReLU layer → linear) to the compressed unit-norm atoms with
//!    Adam on minibatches and a seeded train/validation/test split.
//!
//! [`MlpSurrogate`] implements [`FingerprintModel`] with an exact
//! backpropagated Jacobian (ReLU taken flat at 0), so location refinement
//! gets smooth, machine-precision derivatives. [`CompressedModel`] wraps
//! any other model behind the same subspace so that exact simulation and
//! surrogate can be swapped within one compressed problem.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::bloch::{epg_fisp, normalize_with_jacobian, FingerprintModel, FispSequence, Theta};
use crate::{Error, Result};

/// Scale every column to unit ℓ2 norm (columns of all zeros are left alone).
pub fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}

/// Simulate the exact dictionary of `seq` on `thetas`: the truncation cap is
/// raised to the train length (the recursion is then exact), columns are
/// normalized, and the work is parallelized.
pub fn epg_dictionary(seq: &FispSequence, thetas: &[Theta]) -> Result<DMatrix<f64>> {
    let exact = seq.clone().with_epg_order(seq.len().max(crate::bloch::MIN_EPG_ORDER))?;
    let cols: Vec<DVector<f64>> = thetas.par_iter().map(|th| epg_fisp(&exact, th)).collect();
    let mut d = DMatrix::zeros(seq.len(), thetas.len());
    for (j, col) in cols.into_iter().enumerate() {
        d.set_column(j, &col);
    }
    normalize_columns(&mut d);
    Ok(d)
}

/// A dominant subspace of a dictionary.
#[derive(Debug, Clone)]
pub struct Subspace {
    /// T×τ orthonormal basis.
    pub basis: DMatrix<f64>,
    /// Top τ eigenvalues of D·Dᵀ, descending.
    pub eigenvalues: Vec<f64>,
    /// Fraction of total dictionary energy captured by the basis.
    pub energy_fraction: f64,
}

impl Subspace {
    /// Project data or atoms onto the subspace: X ↦ basisᵀ·X.
    pub fn compress(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis.tr_mul(x)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Fit the top-τ left subspace of `dictionary` (T×N, atoms as columns) via
/// the eigendecomposition of the T×T Gram matrix D·Dᵀ.
pub fn fit_subspace(dictionary: &DMatrix<f64>, tau: usize) -> Result<Subspace> {
    let (t, n) = (dictionary.nrows(), dictionary.ncols());
    if tau == 0 || tau > t {
        return Err(Error::InvalidParam(format!(
            "subspace dimension {tau} outside 1..={t}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParam("empty dictionary".into()));
    }
    // Blocked, parallel D·Dᵀ: N can reach ~1e5 columns. The blocks are
    // combined along a fixed binary tree so the floating-point sum — and
    // therefore every downstream artifact — is identical run to run
    // regardless of thread scheduling.
    fn gram_blocks(d: &DMatrix<f64>, starts: &[usize], block: usize) -> DMatrix<f64> {
        if starts.len() == 1 {
            let s = starts[0];
            let cols = d.columns(s, block.min(d.ncols() - s));
            return &cols * cols.transpose();
        }
        let mid = starts.len() / 2;
        let (a, b) = rayon::join(
            || gram_blocks(d, &starts[..mid], block),
            || gram_blocks(d, &starts[mid..], block),
        );
        a + b
    }
    let block = 1024;
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let gram = gram_blocks(dictionary, &starts, block);

    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(t, tau);
    let mut eigenvalues = Vec::with_capacity(tau);
    for (j, &i) in order.iter().take(tau).enumerate() {
        basis.set_column(j, &eig.eigenvectors.column(i));
        eigenvalues.push(eig.eigenvalues[i].max(0.0));
    }
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let kept: f64 = eigenvalues.iter().sum();
    Ok(Subspace {
        basis,
        eigenvalues,
        energy_fraction: if total > 0.0 { kept / total } else { 1.0 },
    })
}

/// Training hyperparameters for [`train_surrogate`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 500,
            epochs: 100,
            batch_size: 100,
            learning_rate: 5e-3,
            lr_decay: 0.95,
            adam_beta1: 0.95,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Split quality metrics of a finished training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_nrmse: f64,
    pub val_nrmse: f64,
    pub test_nrmse: f64,
    /// Validation NRMSE after each epoch.
    pub val_trace: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Relative root-mean-square error √(Σ‖pred − target‖² / Σ‖target‖²).
pub fn nrmse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    ((pred - target).norm_squared() / target.norm_squared()).sqrt()
}

/// MLP fingerprint surrogate: (ln T1, ln T2) scaled to [0, 1]² → `hidden`
/// ReLU units → linear output. [`FingerprintModel::eval`] normalizes the
/// raw network output; the Jacobian backpropagates exactly through both the
/// network and the normalization.
#[derive(Debug, Clone)]
pub struct MlpSurrogate {
    w1: DMatrix<f64>, // hidden×2
    b1: DVector<f64>,
    w2: DMatrix<f64>, // out×hidden
    b2: DVector<f64>,
    ln_lo: [f64; 2],
    ln_hi: [f64; 2],
    /// Optional compression basis (T×out) carried along so one artifact
    /// suffices to compress raw data into the surrogate's output space.
    pub subspace: Option<DMatrix<f64>>,
}

impl MlpSurrogate {
    /// Randomly initialized network (He-scaled), mapping the given (T1, T2)
    /// ranges. Useful as a training starting point and as an arbitrary
    /// smooth model in tests.
    pub fn random_init(
        hidden: usize,
        out_dim: usize,
        t1_range: (f64, f64),
        t2_range: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 || out_dim == 0 {
            return Err(Error::InvalidParam("empty network".into()));
        }
        if !(t1_range.0 > 0.0 && t1_range.1 > t1_range.0 && t2_range.0 > 0.0 && t2_range.1 > t2_range.0)
        {
            return Err(Error::InvalidParam("degenerate parameter ranges".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (2.0_f64 / 2.0).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (2.0_f64 / hidden as f64).sqrt()).unwrap();
        let w1 = DMatrix::from_fn(hidden, 2, |_, _| n1.sample(&mut rng));
        // Place each hidden unit's hinge through a random point of the
        // scaled input square; with zero biases every kink would pass
        // through the origin and the network could not bend elsewhere.
        let b1 = DVector::from_fn(hidden, |j, _| {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            -(w1[(j, 0)] * p[0] + w1[(j, 1)] * p[1])
        });
        Ok(MlpSurrogate {
            w1,
            b1,
            w2: DMatrix::from_fn(out_dim, hidden, |_, _| n2.sample(&mut rng)),
            b2: DVector::zeros(out_dim),
            ln_lo: [t1_range.0.ln(), t2_range.0.ln()],
            ln_hi: [t1_range.1.ln(), t2_range.1.ln()],
            subspace: None,
        })
    }

    pub fn with_subspace(mut self, basis: DMatrix<f64>) -> Result<Self> {
        if basis.ncols() != self.out_dim() {
            return Err(Error::DimMismatch(format!(
                "basis has {} columns, network emits {}",
                basis.ncols(),
                self.out_dim()
            )));
        }
        self.subspace = Some(basis);
        Ok(self)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.nrows()
    }

    fn scale_input(&self, theta: &Theta) -> [f64; 2] {
        let l = theta.ln();
        [
            (l[0] - self.ln_lo[0]) / (self.ln_hi[0] - self.ln_lo[0]),
            (l[1] - self.ln_lo[1]) / (self.ln_hi[1] - self.ln_lo[1]),
        ]
    }

    /// Raw (unnormalized) network output.
    pub fn raw_eval(&self, theta: &Theta) -> DVector<f64> {
        let x = self.scale_input(theta);
        let mut z1 = &self.w1 * DVector::from_column_slice(&x) + &self.b1;
        z1.apply(|z| *z = z.max(0.0));
        &self.w2 * z1 + &self.b2
    }

    /// Raw output and its exact Jacobian with respect to (T1, T2) in ms.
    pub fn raw_eval_jac(&self, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        let x = self.scale_input(theta);
        let z1 = &self.w1 * DVector::from_column_slice(&x) + &self.b1;
        let a1 = z1.map(|z| z.max(0.0));
        let y = &self.w2 * &a1 + &self.b2;
        // d y / d x_scaled = W2 · diag(ReLU'(z1)) · W1, with ReLU'(0) = 0.
        let mut w1_masked = self.w1.clone();
        for (h, z) in z1.iter().enumerate() {
            if *z <= 0.0 {
                w1_masked.row_mut(h).fill(0.0);
            }
        }
        let mut jac = &self.w2 * w1_masked; // out×2
        // Chain through input scaling and the log: d x_scaled/d T = 1/(Δ·T).
        let s0 = 1.0 / ((self.ln_hi[0] - self.ln_lo[0]) * theta.t1());
        let s1 = 1.0 / ((self.ln_hi[1] - self.ln_lo[1]) * theta.t2());
        jac.column_mut(0).scale_mut(s0);
        jac.column_mut(1).scale_mut(s1);
        (y, jac)
    }

    /// Serialize to `path`: a one-line JSON header followed by all
    /// coefficients as little-endian f64 in column-major order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "format": "sgb-mlp",
            "version": 1,
            "hidden": self.hidden_dim(),
            "out_dim": self.out_dim(),
            "ln_lo": self.ln_lo,
            "ln_hi": self.ln_hi,
            "subspace_rows": self.subspace.as_ref().map_or(0, |v| v.nrows()),
        });
        let mut f = std::io::BufWriter::new(crate::io::create(path)?);
        serde_json::to_writer(&mut f, &header)?;
        f.write_all(b"\n")?;
        let mut write_slice = |s: &[f64]| -> Result<()> {
            for v in s {
                f.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        write_slice(self.w1.as_slice())?;
        write_slice(self.b1.as_slice())?;
        write_slice(self.w2.as_slice())?;
        write_slice(self.b2.as_slice())?;
        if let Some(v) = &self.subspace {
            write_slice(v.as_slice())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(crate::io::open(path)?);
        let mut header_bytes = Vec::new();
        {
            use std::io::BufRead;
            f.read_until(b'\n', &mut header_bytes)?;
        }
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::format("surrogate file", format!("bad header: {e}")))?;
        if header["format"] != "sgb-mlp" {
            return Err(Error::format("surrogate file", "missing sgb-mlp marker"));
        }
        let get = |k: &str| -> Result<usize> {
            header[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::format("surrogate file", format!("missing field {k}")))
        };
        let hidden = get("hidden")?;
        let out_dim = get("out_dim")?;
        let sub_rows = get("subspace_rows")?;
        let arr2 = |k: &str| -> Result<[f64; 2]> {
            let a = header[k]
                .as_array()
                .ok_or_else(|| Error::format("surrogate file", format!("missing field {k}")))?;
            if a.len() != 2 {
                return Err(Error::format("surrogate file", format!("{k} must have 2 entries")));
            }
            Ok([a[0].as_f64().unwrap_or(f64::NAN), a[1].as_f64().unwrap_or(f64::NAN)])
        };
        let ln_lo = arr2("ln_lo")?;
        let ln_hi = arr2("ln_hi")?;

        let expected = hidden * 2 + hidden + out_dim * hidden + out_dim + sub_rows * out_dim;
        let mut blob = Vec::new();
        f.read_to_end(&mut blob)?;
        if blob.len() != expected * 8 {
            return Err(Error::format(
                "surrogate file",
                format!("blob holds {} bytes, expected {}", blob.len(), expected * 8),
            ));
        }
        let mut vals = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
        let w1 = DMatrix::from_column_slice(hidden, 2, &take(hidden * 2));
        let b1 = DVector::from_column_slice(&take(hidden));
        let w2 = DMatrix::from_column_slice(out_dim, hidden, &take(out_dim * hidden));
        let b2 = DVector::from_column_slice(&take(out_dim));
        let subspace = if sub_rows > 0 {
            Some(DMatrix::from_column_slice(sub_rows, out_dim, &take(sub_rows * out_dim)))
        } else {
            None
        };
        Ok(MlpSurrogate { w1, b1, w2, b2, ln_lo, ln_hi, subspace })
    }
}

impl FingerprintModel for MlpSurrogate {
    fn dim(&self) -> usize {
        self.out_dim()
    }

    fn eval(&self, theta: &Theta) -> DVector<f64> {
        let y = self.raw_eval(theta);
        let n = y.norm();
        y / n
    }

    fn jacobian(&self, theta: &Theta) -> DMatrix<f64> {
        self.eval_jac(theta).1
    }

    fn eval_jac(&self, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        let (y, jac) = self.raw_eval_jac(theta);
        normalize_with_jacobian(&y, &jac)
    }
}

/// Any model projected onto a subspace basis: the response is the
/// renormalized projection, the Jacobian follows by the chain and quotient
/// rules.
#[derive(Debug, Clone)]
pub struct CompressedModel<M: FingerprintModel> {
    pub inner: M,
    /// T×τ orthonormal basis.
    pub basis: DMatrix<f64>,
}

impl<M: FingerprintModel> CompressedModel<M> {
    pub fn new(inner: M, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != inner.dim() {
            return Err(Error::DimMismatch(format!(
                "basis has {} rows, model emits {}",
                basis.nrows(),
                inner.dim()
            )));
        }
        Ok(CompressedModel { inner, basis })
    }
}

impl<M: FingerprintModel> FingerprintModel for CompressedModel<M> {
    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn eval(&self, theta: &Theta) -> DVector<f64> {
        let u = self.basis.tr_mul(&self.inner.eval(theta));
        let n = u.norm();
        u / n
    }

    fn jacobian(&self, theta: &Theta) -> DMatrix<f64> {
        self.eval_jac(theta).1
    }

    fn eval_jac(&self, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        let (f, j) = self.inner.eval_jac(theta);
        let u = self.basis.tr_mul(&f);
        let ju = self.basis.tr_mul(&j);
        normalize_with_jacobian(&u, &ju)
    }
}

struct Adam {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl Adam {
    fn new(rows: usize, cols: usize) -> Self {
        Adam { m: DMatrix::zeros(rows, cols), v: DMatrix::zeros(rows, cols) }
    }

    fn step(&mut self, param: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64, t: i32, cfg: &TrainConfig) {
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        self.m = &self.m * b1 + grad * (1.0 - b1);
        self.v = self.v.zip_map(grad, |v, g| b2 * v + (1.0 - b2) * g * g);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for i in 0..param.len() {
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            param[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Train an MLP on (θ, target) pairs; `targets` is out_dim×N with one
/// column per location. Returns the network and split metrics. The split,
/// initialization, and batch order are all driven by `cfg.seed`, so a rerun
/// reproduces the same network bit for bit.
pub fn train_surrogate(
    thetas: &[Theta],
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<(MlpSurrogate, TrainReport)> {
    let n = thetas.len();
    if targets.ncols() != n {
        return Err(Error::DimMismatch(format!(
            "{n} locations but {} target columns",
            targets.ncols()
        )));
    }
    if n < 10 {
        return Err(Error::InvalidParam(format!("need at least 10 samples, got {n}")));
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParam("hidden, batch_size, epochs must be positive".into()));
    }
    if !(cfg.val_fraction >= 0.0
        && cfg.test_fraction >= 0.0
        && cfg.val_fraction + cfg.test_fraction < 0.9)
    {
        return Err(Error::InvalidParam("split fractions leave too little training data".into()));
    }
    let out_dim = targets.nrows();

    // Input scaling from the data's own log ranges.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for th in thetas {
        let l = th.ln();
        for c in 0..2 {
            lo[c] = lo[c].min(l[c]);
            hi[c] = hi[c].max(l[c]);
        }
    }
    for c in 0..2 {
        if !(hi[c] > lo[c]) {
            return Err(Error::InvalidParam("training locations are degenerate along one axis".into()));
        }
    }
    let x_all = DMatrix::from_fn(2, n, |r, j| {
        let l = thetas[j].ln();
        (l[r] - lo[r]) / (hi[r] - lo[r])
    });

    // Seeded split.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_val = (n as f64 * cfg.val_fraction).round() as usize;
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let n_train = n - n_val - n_test;
    let (train_idx, rest) = idx.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let gather = |ids: &[usize]| -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(2, ids.len(), |r, j| x_all[(r, ids[j])]);
        let y = DMatrix::from_fn(out_dim, ids.len(), |r, j| targets[(r, ids[j])]);
        (x, y)
    };

    // He-scaled weights; first-layer biases place each ReLU hinge through
    // a random point of the input square so the kinks tile the domain
    // (zero biases would put every kink through the origin).
    let n1 = Normal::new(0.0, 1.0).unwrap();
    let mut w1 = DMatrix::from_fn(cfg.hidden, 2, |_, _| n1.sample(&mut rng));
    let mut b1 = DMatrix::from_fn(cfg.hidden, 1, |j, _| {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        -(w1[(j, 0)] * p[0] + w1[(j, 1)] * p[1])
    });
    let mut w2 =
        DMatrix::from_fn(out_dim, cfg.hidden, |_, _| n1.sample(&mut rng) * (2.0 / cfg.hidden as f64).sqrt());
    let mut b2 = DMatrix::zeros(out_dim, 1);

    let forward = |w1: &DMatrix<f64>,
                   b1: &DMatrix<f64>,
                   w2: &DMatrix<f64>,
                   b2: &DMatrix<f64>,
                   x: &DMatrix<f64>|
     -> DMatrix<f64> {
        let mut z1 = w1 * x;
        for mut col in z1.column_iter_mut() {
            col += b1.column(0);
        }
        z1.apply(|z| *z = z.max(0.0));
        let mut y = w2 * z1;
        for mut col in y.column_iter_mut() {
            col += b2.column(0);
        }
        y
    };
    let split_nrmse = |w1: &DMatrix<f64>,
                       b1: &DMatrix<f64>,
                       w2: &DMatrix<f64>,
                       b2: &DMatrix<f64>,
                       ids: &[usize]|
     -> f64 {
        if ids.is_empty() {
            return f64::NAN;
        }
        let (x, y) = gather(ids);
        nrmse(&forward(w1, b1, w2, b2, &x), &y)
    };

    let mut adam_w1 = Adam::new(cfg.hidden, 2);
    let mut adam_b1 = Adam::new(cfg.hidden, 1);
    let mut adam_w2 = Adam::new(out_dim, cfg.hidden);
    let mut adam_b2 = Adam::new(out_dim, 1);
    let mut lr = cfg.learning_rate;
    let mut t_step = 0;
    let mut val_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let (xb, yb) = gather(chunk);
            let bsz = chunk.len() as f64;
            // Forward with pre-activation kept for the backward pass.
            let mut z1 = &w1 * &xb;
            for mut col in z1.column_iter_mut() {
                col += b1.column(0);
            }
            let a1 = z1.map(|z| z.max(0.0));
            let mut y = &w2 * &a1;
            for mut col in y.column_iter_mut() {
                col += b2.column(0);
            }
            // ½·mean squared error over the batch.
            let dy = (&y - &yb) / bsz;
            let g_w2 = &dy * a1.transpose();
            let g_b2 = DMatrix::from_column_slice(
                out_dim,
                1,
                dy.column_sum().as_slice(),
            );
            let mut dz1 = w2.tr_mul(&dy);
            dz1.zip_apply(&z1, |d, z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            let g_w1 = &dz1 * xb.transpose();
            let g_b1 = DMatrix::from_column_slice(cfg.hidden, 1, dz1.column_sum().as_slice());

            t_step += 1;
            adam_w1.step(&mut w1, &g_w1, lr, t_step, cfg);
            adam_b1.step(&mut b1, &g_b1, lr, t_step, cfg);
            adam_w2.step(&mut w2, &g_w2, lr, t_step, cfg);
            adam_b2.step(&mut b2, &g_b2, lr, t_step, cfg);
        }
        lr *= cfg.lr_decay;
        let val = split_nrmse(&w1, &b1, &w2, &b2, val_idx);
        val_trace.push(val);
        if (epoch + 1) % 10 == 0 {
            log::debug!("epoch {}: validation NRMSE {val:.4e}", epoch + 1);
        }
    }

    let report = TrainReport {
        train_nrmse: split_nrmse(&w1, &b1, &w2, &b2, &train_idx),
        val_nrmse: split_nrmse(&w1, &b1, &w2, &b2, val_idx),
        test_nrmse: split_nrmse(&w1, &b1, &w2, &b2, test_idx),
        val_trace,
        n_train,
        n_val,
        n_test,
    };
    log::info!(
        "training done: NRMSE train {:.3e}, val {:.3e}, test {:.3e}",
        report.train_nrmse,
        report.val_nrmse,
        report.test_nrmse
    );
    let net = MlpSurrogate {
        w1,
        b1: DVector::from_column_slice(b1.as_slice()),
        w2,
        b2: DVector::from_column_slice(b2.as_slice()),
        ln_lo: lo,
        ln_hi: hi,
        subspace: None,
    };
    Ok((net, report))
}
