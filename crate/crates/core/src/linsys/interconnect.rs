use std::collections::HashMap;

use nalgebra::DMatrix;

use super::statespace::invert;
use super::StateSpace;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Block<T: Scalar> {
    sys: StateSpace<T>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

#[derive(Debug, Clone)]
struct Junction<T: Scalar> {
    output: String,
    terms: Vec<(String, T)>,
}

/// Named-signal block diagram.
///
/// Every scalar signal has exactly one source: an external input, a block
/// output port, or a summing junction. Block input ports and external outputs
/// refer to signals by name. Algebraic loops are allowed as long as the
/// resulting linear system for the instantaneous signal values is nonsingular.
///
/// ```
/// use indi_hinf::linsys::{Interconnection, StateSpace};
/// let g = StateSpace::<f64>::integrator();
/// let mut ic = Interconnection::new();
/// ic.block(g, &["e"], &["y"])
///     .sum("e", &[("r", 1.0), ("y", -1.0)])
///     .inputs(&["r"])
///     .outputs(&["y"]);
/// let cl = ic.build().unwrap();
/// assert_eq!(cl.nstates(), 1);
/// ```
#[derive(Debug, Clone)]
pub struct Interconnection<T: Scalar> {
    blocks: Vec<Block<T>>,
    junctions: Vec<Junction<T>>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl<T: Scalar> Default for Interconnection<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    External(usize),
    Internal(usize),
}

/// `["base[0]", "base[1]", ...]`.
pub fn indexed_names(base: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{base}[{i}]")).collect()
}

impl<T: Scalar> Interconnection<T> {
    pub fn new() -> Self {
        Self { blocks: Vec::new(), junctions: Vec::new(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn block<S: AsRef<str>>(&mut self, sys: StateSpace<T>, inputs: &[S], outputs: &[S]) -> &mut Self {
        self.blocks.push(Block {
            sys,
            inputs: inputs.iter().map(|s| s.as_ref().to_owned()).collect(),
            outputs: outputs.iter().map(|s| s.as_ref().to_owned()).collect(),
        });
        self
    }

    /// `output = sum(gain * signal)`.
    pub fn sum<S: AsRef<str>>(&mut self, output: &str, terms: &[(S, T)]) -> &mut Self {
        self.junctions.push(Junction {
            output: output.to_owned(),
            terms: terms.iter().map(|(s, g)| (s.as_ref().to_owned(), *g)).collect(),
        });
        self
    }

    pub fn inputs<S: AsRef<str>>(&mut self, names: &[S]) -> &mut Self {
        self.inputs.extend(names.iter().map(|s| s.as_ref().to_owned()));
        self
    }

    pub fn outputs<S: AsRef<str>>(&mut self, names: &[S]) -> &mut Self {
        self.outputs.extend(names.iter().map(|s| s.as_ref().to_owned()));
        self
    }

    pub fn input_names(&self) -> &[String] {
        &self.inputs
    }

    pub fn output_names(&self) -> &[String] {
        &self.outputs
    }

    /// Closed diagram reduced to a minimal realization.
    pub fn build(&self) -> Result<StateSpace<T>> {
        Ok(self.build_raw()?.minimal())
    }

    /// Closed diagram with every block state retained.
    pub fn build_raw(&self) -> Result<StateSpace<T>> {
        let mut table: HashMap<&str, Source> = HashMap::new();
        for (i, name) in self.inputs.iter().enumerate() {
            if table.insert(name.as_str(), Source::External(i)).is_some() {
                return Err(Error::Wiring(format!("signal `{name}` defined more than once")));
            }
        }
        let mut nv = 0;
        for blk in &self.blocks {
            if blk.inputs.len() != blk.sys.ninputs() || blk.outputs.len() != blk.sys.noutputs() {
                return Err(Error::Wiring(format!(
                    "block with ports {:?} -> {:?} does not match a {}x{} system",
                    blk.inputs,
                    blk.outputs,
                    blk.sys.noutputs(),
                    blk.sys.ninputs()
                )));
            }
            for name in &blk.outputs {
                if table.insert(name.as_str(), Source::Internal(nv)).is_some() {
                    return Err(Error::Wiring(format!("signal `{name}` defined more than once")));
                }
                nv += 1;
            }
        }
        let ny_total = nv;
        for j in &self.junctions {
            if table.insert(j.output.as_str(), Source::Internal(nv)).is_some() {
                return Err(Error::Wiring(format!("signal `{}` defined more than once", j.output)));
            }
            nv += 1;
        }
        let lookup = |name: &str| -> Result<Source> {
            table
                .get(name)
                .copied()
                .ok_or_else(|| Error::Wiring(format!("signal `{name}` is never defined")))
        };

        let nw = self.inputs.len();
        let nx: usize = self.blocks.iter().map(|b| b.sys.nstates()).sum();
        let nu: usize = self.blocks.iter().map(|b| b.sys.ninputs()).sum();

        let mut a_big = DMatrix::<T>::zeros(nx, nx);
        let mut b_big = DMatrix::<T>::zeros(nx, nu);
        let mut c_big = DMatrix::<T>::zeros(ny_total, nx);
        let mut d_big = DMatrix::<T>::zeros(ny_total, nu);
        let mut u_v = DMatrix::<T>::zeros(nu, nv);
        let mut u_w = DMatrix::<T>::zeros(nu, nw);
        let (mut ox, mut ou, mut oy) = (0, 0, 0);
        for blk in &self.blocks {
            let (n, m, p) = (blk.sys.nstates(), blk.sys.ninputs(), blk.sys.noutputs());
            a_big.view_mut((ox, ox), (n, n)).copy_from(blk.sys.a());
            b_big.view_mut((ox, ou), (n, m)).copy_from(blk.sys.b());
            c_big.view_mut((oy, ox), (p, n)).copy_from(blk.sys.c());
            d_big.view_mut((oy, ou), (p, m)).copy_from(blk.sys.d());
            for (k, name) in blk.inputs.iter().enumerate() {
                match lookup(name)? {
                    Source::External(i) => u_w[(ou + k, i)] = T::one(),
                    Source::Internal(i) => u_v[(ou + k, i)] = T::one(),
                }
            }
            ox += n;
            ou += m;
            oy += p;
        }

        // v = P x + Q v + R w
        let mut q = DMatrix::<T>::zeros(nv, nv);
        let mut r = DMatrix::<T>::zeros(nv, nw);
        let mut pm = DMatrix::<T>::zeros(nv, nx);
        pm.view_mut((0, 0), (ny_total, nx)).copy_from(&c_big);
        q.view_mut((0, 0), (ny_total, nv)).copy_from(&(&d_big * &u_v));
        r.view_mut((0, 0), (ny_total, nw)).copy_from(&(&d_big * &u_w));
        for (k, j) in self.junctions.iter().enumerate() {
            let row = ny_total + k;
            for (name, g) in &j.terms {
                match lookup(name)? {
                    Source::External(i) => r[(row, i)] += *g,
                    Source::Internal(i) => q[(row, i)] += *g,
                }
            }
        }
        let solve = invert(&(DMatrix::<T>::identity(nv, nv) - &q)).ok_or_else(|| {
            Error::IllPosed("algebraic loop has a singular feedthrough (I - D_loop)".into())
        })?;
        let v_x = &solve * &pm;
        let v_w = &solve * &r;

        let a = &a_big + &b_big * &u_v * &v_x;
        let b = &b_big * (&u_v * &v_w + &u_w);
        let np = self.outputs.len();
        let mut c = DMatrix::<T>::zeros(np, nx);
        let mut d = DMatrix::<T>::zeros(np, nw);
        for (k, name) in self.outputs.iter().enumerate() {
            match lookup(name)? {
                Source::External(i) => d[(k, i)] = T::one(),
                Source::Internal(i) => {
                    c.row_mut(k).copy_from(&v_x.row(i));
                    d.row_mut(k).copy_from(&v_w.row(i));
                }
            }
        }
        StateSpace::new(a, b, c, d)
    }
}
