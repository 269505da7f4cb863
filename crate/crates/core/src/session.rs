use crate::blocks::{Builder, ConvRole};
use crate::error::Result;
use crate::nn::{ConvSpec, Mode, Tape, Var};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};
use crate::zoo::ModelGraph;

/// Evaluates blocks numerically on a tape, reading weights from a
/// [`ParamStore`] and updating batch-norm running statistics in training mode.
pub struct Session<'a, T: Element> {
    pub tape: Tape<T>,
    store: &'a mut ParamStore<T>,
    mode: Mode,
}

impl<'a, T: Element> Session<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        Session {
            tape: Tape::new(),
            store,
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.input(x)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let t = self.store.get_arc(name)?;
        Ok(self.tape.param(name, t))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }
}

impl<T: Element> Builder for Session<'_, T> {
    type V = Var;

    fn conv(&mut self, name: &str, x: &Var, spec: &ConvSpec, role: ConvRole) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        match role {
            ConvRole::AxialH => self.tape.conv1d_h(*x, w, spec),
            ConvRole::AxialW => self.tape.conv1d_w(*x, w, spec),
            _ => {
                let b = if spec.bias {
                    Some(self.param(&format!("{name}.bias"))?)
                } else {
                    None
                };
                self.tape.conv2d(*x, w, b, spec)
            }
        }
    }

    fn batch_norm(&mut self, name: &str, x: &Var) -> Result<Var> {
        let scale = self.param(&format!("{name}.weight"))?;
        let shift = self.param(&format!("{name}.bias"))?;
        let mean_key = format!("{name}.running_mean");
        let var_key = format!("{name}.running_var");
        let mut rm = self.store.get(&mean_key)?.clone();
        let mut rv = self.store.get(&var_key)?.clone();
        let y = self.tape.batch_norm(*x, scale, shift, &mut rm, &mut rv, self.mode)?;
        if self.mode == Mode::Train {
            *self.store.get_mut(&mean_key)? = rm;
            *self.store.get_mut(&var_key)? = rv;
        }
        Ok(y)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        Ok(self.tape.relu(*x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.tape.global_avg_pool(*x)
    }

    fn linear(&mut self, name: &str, x: &Var, _d_in: usize, _d_out: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.tape.linear(*x, w, b)
    }
}

/// One forward pass of `model` on `x`, returning the output tensor.
pub fn forward<T: Element>(model: &ModelGraph, store: &mut ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    let mut s = Session::new(store, mode);
    let xv = s.input(x.clone());
    let y = model.forward(&mut s, &xv)?;
    Ok(s.value(y).clone())
}
