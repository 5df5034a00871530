//! Named parameter storage and per-pass bindings.
//!
//! Networks hold parameter *names*; the values live in a [`ParamStore`]. A
//! [`Binding`] wraps a store for one forward pass and hands out graph
//! variables, trainable or constant depending on the binding's
//! [`Trainable`] selector.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use bgop_tensor::{Float, Gradients, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Initial value of a parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `U(−bound, bound)`.
    Uniform(f64),
    Constant(f64),
    /// Square matrix with `diag` on the diagonal and `off` elsewhere.
    Diagonal { diag: f64, off: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }

    fn materialize<F: Float>(&self, rng: &mut impl Rng) -> Tensor<F> {
        match self.init {
            Init::Uniform(bound) => {
                Tensor::from_fn(&self.shape, |_| F::from_f64(rng.gen_range(-bound..=bound)))
            }
            Init::Constant(v) => Tensor::full(&self.shape, F::from_f64(v)),
            Init::Diagonal { diag, off } => {
                let n = self.shape[0];
                Tensor::from_fn(&self.shape, |i| F::from_f64(if i / n == i % n { diag } else { off }))
            }
        }
    }
}

/// Ordered map from parameter name to value.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F: Float> {
    params: BTreeMap<String, Tensor<F>>,
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        Self { params: BTreeMap::new() }
    }
}

impl<F: Float> ParamStore<F> {
    pub fn from_specs(specs: &[ParamSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut params = BTreeMap::new();
        for spec in specs {
            if params.insert(spec.name.clone(), spec.materialize(rng)).is_some() {
                return Err(Error::config(format!("duplicate parameter {}", spec.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) {
        self.params.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Fails unless the store holds exactly the parameters in `specs`, with
    /// matching shapes.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for spec in specs {
            let t = self
                .params
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore { params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// Which parameters a binding exposes as trainable leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trainable {
    None,
    All,
    /// Names starting with any of the prefixes, minus names starting with
    /// any of the exclusions.
    Prefixes { include: Vec<String>, exclude: Vec<String> },
}

impl Trainable {
    pub fn prefixes(include: &[&str]) -> Self {
        Trainable::Prefixes { include: include.iter().map(|s| s.to_string()).collect(), exclude: Vec::new() }
    }

    pub fn excluding(mut self, prefix: &str) -> Self {
        match &mut self {
            Trainable::None => {}
            Trainable::All => {
                self = Trainable::Prefixes { include: vec![String::new()], exclude: vec![prefix.to_string()] }
            }
            Trainable::Prefixes { exclude, .. } => exclude.push(prefix.to_string()),
        }
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        match self {
            Trainable::None => false,
            Trainable::All => true,
            Trainable::Prefixes { include, exclude } => {
                include.iter().any(|p| name.starts_with(p.as_str()))
                    && !exclude.iter().any(|p| name.starts_with(p.as_str()))
            }
        }
    }
}

/// One forward pass's view of a [`ParamStore`].
pub struct Binding<'a, F: Float> {
    store: &'a ParamStore<F>,
    trainable: Trainable,
    vars: RefCell<HashMap<String, Var<F>>>,
}

impl<'a, F: Float> Binding<'a, F> {
    pub fn new(store: &'a ParamStore<F>, trainable: Trainable) -> Self {
        Self { store, trainable, vars: RefCell::new(HashMap::new()) }
    }

    /// Inference binding: every parameter is a constant.
    pub fn frozen(store: &'a ParamStore<F>) -> Self {
        Self::new(store, Trainable::None)
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<Var<F>> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Ok(v.clone());
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?
            .clone();
        let var = if self.trainable.contains(name) { Var::leaf(value) } else { Var::constant(value) };
        self.vars.borrow_mut().insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Names of the trainable parameters touched by the pass so far.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names: Vec<_> =
            self.vars.borrow().iter().filter(|(_, v)| v.requires_grad()).map(|(k, _)| k.clone()).collect();
        names.sort();
        names
    }

    /// Gradients of every trainable parameter used in the pass. Parameters
    /// the loss does not depend on map to zero tensors.
    pub fn collect_gradients(&self, grads: &Gradients<F>) -> BTreeMap<String, Tensor<F>> {
        self.vars
            .borrow()
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(name, v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
