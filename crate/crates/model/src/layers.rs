//! Forward context binding named parameters to tape leaves, plus the basic
//! parameterized layers.

use std::collections::HashMap;

use icci_core::Rng;

use crate::array::Arr;
use crate::params::{Param, ParamStore};
use crate::tape::{Grads, Tape, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Gaussian with standard deviation `sqrt(2 / fan_in)`.
    He(usize),
    Zeros,
    Const(f64),
}

enum Source<'a> {
    Fixed(&'a ParamStore),
    Init { store: &'a mut ParamStore, rng: Rng },
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub struct Ctx<'a> {
    pub tape: Tape,
    source: Source<'a>,
    leaves: HashMap<String, Var>,
    train: bool,
    grad: bool,
    overrides: Option<(String, usize, f64)>,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    /// Forward over existing parameters. `train` selects batch statistics;
    /// `grad` makes parameters differentiable.
    pub fn new(store: &'a ParamStore, train: bool, grad: bool) -> Self {
        Self {
            tape: Tape::new(),
            source: Source::Fixed(store),
            leaves: HashMap::new(),
            train,
            grad,
            overrides: None,
            bn_updates: Vec::new(),
        }
    }

    /// Forward that creates missing parameters in `store`.
    pub fn initializing(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            source: Source::Init {
                store,
                rng: Rng::new(seed),
            },
            leaves: HashMap::new(),
            train: true,
            grad: false,
            overrides: None,
            bn_updates: Vec::new(),
        }
    }

    /// Replaces one scalar of one parameter with an exact `f64` value.
    pub fn with_override(mut self, name: &str, index: usize, value: f64) -> Self {
        self.overrides = Some((name.to_string(), index, value));
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn store(&self) -> &ParamStore {
        match &self.source {
            Source::Fixed(s) => s,
            Source::Init { store, .. } => store,
        }
    }

    fn ensure(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) {
        if let Source::Init { store, rng } = &mut self.source {
            if store.get(name).is_none() {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::He(fan_in) => {
                        let sd = (2.0 / fan_in.max(1) as f64).sqrt();
                        (0..n).map(|_| (sd * rng.next_gaussian()) as f32).collect()
                    }
                    Init::Zeros => vec![0.0; n],
                    Init::Const(c) => vec![c as f32; n],
                };
                store.insert(
                    name,
                    Param {
                        shape: shape.to_vec(),
                        data,
                        trainable,
                    },
                );
            }
        }
    }

    fn values(&self, name: &str, shape: &[usize]) -> Vec<f64> {
        let p = self
            .store()
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"));
        assert_eq!(p.shape, shape, "parameter {name} shape");
        let mut v = p.to_f64();
        if let Some((n, i, val)) = &self.overrides {
            if n == name {
                v[*i] = *val;
            }
        }
        v
    }

    /// Tape node for trainable parameter `name`.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Var {
        if let Some(&v) = self.leaves.get(name) {
            return v;
        }
        self.ensure(name, shape, init, true);
        let arr = Arr::new(shape.to_vec(), self.values(name, shape));
        let v = if self.grad {
            self.tape.leaf(arr)
        } else {
            self.tape.constant(arr)
        };
        self.leaves.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, value: Arr) -> Var {
        self.tape.constant(value)
    }

    /// Gradients of every parameter leaf, by name.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .leaves
            .iter()
            .filter_map(|(n, v)| grads.get(*v).map(|g| (n.clone(), g.to_vec())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn conv2d(&mut self, name: &str, x: Var, cout: usize, k: usize, stride: usize) -> Var {
        let cin = self.tape.shape(x)[1];
        let w = self.param(&format!("{name}.w"), &[cout, cin, k, k], Init::He(cin * k * k));
        let b = self.param(&format!("{name}.b"), &[cout], Init::Zeros);
        self.tape.conv2d(x, w, Some(b), stride, k / 2)
    }

    pub fn conv3d(&mut self, name: &str, x: Var, cout: usize, k: usize) -> Var {
        let cin = self.tape.shape(x)[1];
        let w = self.param(&format!("{name}.w"), &[cout, cin, k, k, k], Init::He(cin * k * k * k));
        let b = self.param(&format!("{name}.b"), &[cout], Init::Zeros);
        self.tape.conv3d(x, w, Some(b))
    }

    pub fn linear(&mut self, name: &str, x: Var, out: usize) -> Var {
        let fin = self.tape.shape(x)[1];
        let w = self.param(&format!("{name}.w"), &[out, fin], Init::He(fin));
        let b = self.param(&format!("{name}.b"), &[out], Init::Zeros);
        self.tape.linear(x, w, Some(b))
    }

    pub fn prelu(&mut self, name: &str, x: Var) -> Var {
        let f = *self.tape.shape(x).last().unwrap();
        let a = self.param(&format!("{name}.a"), &[f], Init::Const(0.25));
        self.tape.prelu(x, a)
    }

    /// Batch norm with learned affine parameters. Training mode normalizes
    /// with batch statistics and records them for the running averages.
    pub fn batch_norm(&mut self, name: &str, x: Var) -> Var {
        let c = self.tape.shape(x)[1];
        let gamma = self.param(&format!("{name}.gamma"), &[c], Init::Const(1.0));
        let beta = self.param(&format!("{name}.beta"), &[c], Init::Zeros);
        let (mn, vn) = (format!("{name}.running_mean"), format!("{name}.running_var"));
        self.ensure(&mn, &[c], Init::Zeros, false);
        self.ensure(&vn, &[c], Init::Const(1.0), false);
        if self.train {
            let shape = self.tape.shape(x).to_vec();
            let count = shape[0] * shape[2..].iter().product::<usize>();
            let (y, stats) = self.tape.batch_norm(x, gamma, beta, None);
            let (mean, var) = stats.expect("batch statistics");
            self.bn_updates.push(BnUpdate {
                prefix: name.to_string(),
                mean,
                var,
                count,
            });
            y
        } else {
            let rm = self.values(&mn, &[c]);
            let rv = self.values(&vn, &[c]);
            self.tape.batch_norm(x, gamma, beta, Some((&rm, &rv))).0
        }
    }
}

/// Folds recorded batch statistics into the running averages (variance
/// uses the unbiased estimate).
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        let unbias = if u.count > 1 {
            u.count as f64 / (u.count - 1) as f64
        } else {
            1.0
        };
        if let Some(p) = store.get_mut(&format!("{}.running_mean", u.prefix)) {
            for (r, m) in p.data.iter_mut().zip(&u.mean) {
                *r = ((1.0 - BN_MOMENTUM) * *r as f64 + BN_MOMENTUM * m) as f32;
            }
        }
        if let Some(p) = store.get_mut(&format!("{}.running_var", u.prefix)) {
            for (r, v) in p.data.iter_mut().zip(&u.var) {
                *r = ((1.0 - BN_MOMENTUM) * *r as f64 + BN_MOMENTUM * v * unbias) as f32;
            }
        }
    }
}
