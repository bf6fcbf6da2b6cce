//! Minimal reverse-mode tape over dense vectors.
//!
//! Every node holds a vector; scalars are length-1 vectors. Parameter reads
//! record which tensor row they came from, so a backward sweep can hand
//! parameter gradients to a sink row by row. Trees are encoded on short-lived
//! tapes and the loss is built on its own tape with the encoded roots as
//! inputs; the two are chained by seeding tree tapes with the root gradients.

use crate::embed::{TensorId, TensorSet};
use crate::tensor::{axpy, dot, log_sum_exp, norm, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; indexes the result of [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Input,
    Param(TensorId, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    ScaleBy(Var, Var),
    Sum(Vec<Var>),
    Dot(Var, Var),
    Normalize(Var, F),
    Reflect(Var, Var),
    LeakyRelu(Var, F),
    Exp(Var),
    LogSumExp(Vec<Var>),
    /// `x · P` for a constant row `x`.
    Project(TensorId, Vec<F>),
    /// `W · x`.
    MatVec(TensorId, Var),
    /// `−ln clamp(σ(±x), ε, 1−ε)`.
    Bce { x: Var, positive: bool, eps: F },
    /// Contrastive loss of one anchor; `probs` caches the softmax.
    InfoNce {
        anchor: Var,
        positive: Var,
        negatives: Vec<Var>,
        scale: F,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
pub struct Tape<'p, F> {
    params: &'p TensorSet<F>,
    values: Vec<Vec<F>>,
    ops: Vec<Op<F>>,
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p TensorSet<F>) -> Self {
        Self {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p TensorSet<F> {
        self.params
    }

    fn push(&mut self, value: Vec<F>, op: Op<F>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> F {
        self.values[v.0][0]
    }

    /// A constant whose gradient can be read back after [`Tape::backward`].
    pub fn input(&mut self, value: Vec<F>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, c: F) -> Var {
        self.input(vec![c])
    }

    pub fn param(&mut self, id: TensorId, row: usize) -> Var {
        let v = self.params.get(id).row(row).to_vec();
        self.push(v, Op::Param(id, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x - *y).collect();
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).iter().map(|x| *x * c).collect();
        self.push(v, Op::Scale(a, c))
    }

    /// Scalar node `s` times vector `v`.
    pub fn scale_by(&mut self, s: Var, v: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(v).iter().map(|x| *x * k).collect();
        self.push(out, Op::ScaleBy(s, v))
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut out = self.value(xs[0]).to_vec();
        for x in &xs[1..] {
            axpy(F::one(), self.value(*x), &mut out);
        }
        self.push(out, Op::Sum(xs.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = dot(self.value(a), self.value(b));
        self.push(vec![v], Op::Dot(a, b))
    }

    /// `a / ‖a‖`. The caller guarantees a nonzero norm.
    pub fn normalize(&mut self, a: Var) -> Var {
        let n = norm(self.value(a));
        let v = self.value(a).iter().map(|x| *x / n).collect();
        self.push(v, Op::Normalize(a, n))
    }

    /// `x − 2 r (rᵀx)` for a unit-norm `r`.
    pub fn reflect(&mut self, r: Var, x: Var) -> Var {
        let v = crate::geometry::reflect(self.value(r), self.value(x));
        self.push(v, Op::Reflect(r, x))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let v = self
            .value(a)
            .iter()
            .map(|x| crate::tensor::leaky_relu(*x, slope))
            .collect();
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(v, Op::Exp(a))
    }

    /// `ln Σ exp(x_i)` over scalar nodes.
    pub fn log_sum_exp(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<F> = xs.iter().map(|x| self.scalar(*x)).collect();
        self.push(vec![log_sum_exp(&vals)], Op::LogSumExp(xs.to_vec()))
    }

    /// Softmax over scalar nodes, as one scalar node per entry.
    pub fn softmax(&mut self, xs: &[Var]) -> Vec<Var> {
        let lse = self.log_sum_exp(xs);
        xs.iter()
            .map(|x| {
                let d = self.sub(*x, lse);
                self.exp(d)
            })
            .collect()
    }

    /// Row vector `x` times the parameter matrix `id`.
    pub fn project(&mut self, id: TensorId, x: Vec<F>) -> Var {
        let v = self.params.get(id).vec_mul(&x);
        self.push(v, Op::Project(id, x))
    }

    /// Parameter matrix `id` times `x`.
    pub fn mat_vec(&mut self, id: TensorId, x: Var) -> Var {
        let v = self.params.get(id).mul_vec(self.value(x));
        self.push(v, Op::MatVec(id, x))
    }

    /// `logsumexp(z) − z₀` with `z₀ = c·aᵀp` and `zₖ = c·aᵀnₖ`.
    pub fn info_nce(&mut self, anchor: Var, positive: Var, negatives: &[Var], scale: F) -> Var {
        let a = self.value(anchor);
        let z: Vec<F> = std::iter::once(positive)
            .chain(negatives.iter().copied())
            .map(|v| scale * dot(a, self.value(v)))
            .collect();
        let lse = crate::tensor::log_sum_exp(&z);
        let probs = z.iter().map(|zi| (*zi - lse).exp()).collect();
        let loss = lse - z[0];
        self.push(
            vec![loss],
            Op::InfoNce {
                anchor,
                positive,
                negatives: negatives.to_vec(),
                scale,
                probs,
            },
        )
    }

    /// Binary cross-entropy of a logit against target 1 (`positive`) or 0,
    /// with the probability clamped to `[eps, 1 − eps]`.
    pub fn bce(&mut self, x: Var, positive: bool, eps: F) -> Var {
        let z = if positive { self.scalar(x) } else { -self.scalar(x) };
        let p = sigmoid(z).max(eps).min(F::one() - eps);
        self.push(vec![-p.ln()], Op::Bce { x, positive, eps })
    }

    /// Reverse sweep from `seeds`. Parameter gradients go to `sink` one row
    /// at a time; the returned vector holds the gradient of every node.
    pub fn backward(
        &self,
        seeds: &[(Var, Vec<F>)],
        sink: &mut impl FnMut(TensorId, usize, &[F]),
    ) -> Vec<Option<Vec<F>>> {
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.values.len()];
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g);
        }
        let upper = seeds.iter().map(|(v, _)| v.0 + 1).max().unwrap_or(0);
        for i in (0..upper).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, sink);
            grads[i] = Some(g);
        }
        grads
    }

    fn propagate(
        &self,
        i: usize,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
        sink: &mut impl FnMut(TensorId, usize, &[F]),
    ) {
        let two = F::of(2.0);
        match &self.ops[i] {
            Op::Input => {}
            Op::Param(id, row) => sink(*id, *row, g),
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<F> = g.iter().map(|x| -*x).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<F> = g.iter().zip(self.value(*b)).map(|(x, y)| *x * *y).collect();
                let gb: Vec<F> = g.iter().zip(self.value(*a)).map(|(x, y)| *x * *y).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Scale(a, c) => {
                let ga: Vec<F> = g.iter().map(|x| *x * *c).collect();
                accumulate(grads, *a, &ga);
            }
            Op::ScaleBy(s, v) => {
                let k = self.scalar(*s);
                accumulate(grads, *s, &[dot(g, self.value(*v))]);
                let gv: Vec<F> = g.iter().map(|x| *x * k).collect();
                accumulate(grads, *v, &gv);
            }
            Op::Sum(xs) => {
                for x in xs {
                    accumulate(grads, *x, g);
                }
            }
            Op::Dot(a, b) => {
                let ga: Vec<F> = self.value(*b).iter().map(|y| *y * g[0]).collect();
                let gb: Vec<F> = self.value(*a).iter().map(|y| *y * g[0]).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Normalize(a, n) => {
                let y = &self.values[i];
                let yg = dot(y, g);
                let ga: Vec<F> = g.iter().zip(y).map(|(gi, yi)| (*gi - *yi * yg) / *n).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Reflect(r, x) => {
                let (rv, xv) = (self.value(*r), self.value(*x));
                let (rx, rg) = (dot(rv, xv), dot(rv, g));
                let gx: Vec<F> = g.iter().zip(rv).map(|(gi, ri)| *gi - two * rg * *ri).collect();
                let gr: Vec<F> = g
                    .iter()
                    .zip(xv)
                    .map(|(gi, xi)| -two * (rx * *gi + rg * *xi))
                    .collect();
                accumulate(grads, *x, &gx);
                accumulate(grads, *r, &gr);
            }
            Op::LeakyRelu(a, slope) => {
                let ga: Vec<F> = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(gi, xi)| if *xi > F::zero() { *gi } else { *gi * *slope })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<F> = g.iter().zip(&self.values[i]).map(|(gi, yi)| *gi * *yi).collect();
                accumulate(grads, *a, &ga);
            }
            Op::LogSumExp(xs) => {
                let lse = self.values[i][0];
                for x in xs {
                    let w = (self.scalar(*x) - lse).exp();
                    accumulate(grads, *x, &[g[0] * w]);
                }
            }
            Op::Project(id, x) => {
                for (row, xi) in x.iter().enumerate() {
                    if xi.is_zero() {
                        continue;
                    }
                    let gr: Vec<F> = g.iter().map(|gj| *gj * *xi).collect();
                    sink(*id, row, &gr);
                }
            }
            Op::MatVec(id, x) => {
                let w = self.params.get(*id);
                let xv = self.value(*x);
                let mut gr = vec![F::zero(); xv.len()];
                for (row, gi) in g.iter().enumerate() {
                    for (o, xj) in gr.iter_mut().zip(xv) {
                        *o = *xj * *gi;
                    }
                    sink(*id, row, &gr);
                }
                accumulate(grads, *x, &w.vec_mul(g));
            }
            Op::Bce { x, positive, eps } => {
                let z = if *positive { self.scalar(*x) } else { -self.scalar(*x) };
                let s = sigmoid(z);
                if s > *eps && s < F::one() - *eps {
                    // d/dz −ln σ(z) = σ(z) − 1
                    let dz = (s - F::one()) * g[0];
                    let dx = if *positive { dz } else { -dz };
                    accumulate(grads, *x, &[dx]);
                }
            }
            Op::InfoNce {
                anchor,
                positive,
                negatives,
                scale,
                probs,
            } => {
                let a = self.value(*anchor);
                let mut ga = vec![F::zero(); a.len()];
                for (k, v) in std::iter::once(positive).chain(negatives).enumerate() {
                    // dL/dz₀ = p₀ − 1, dL/dzₖ = pₖ
                    let dz = if k == 0 { probs[0] - F::one() } else { probs[k] } * g[0] * *scale;
                    axpy(dz, self.value(*v), &mut ga);
                    let gv: Vec<F> = a.iter().map(|x| *x * dz).collect();
                    accumulate(grads, *v, &gv);
                }
                accumulate(grads, *anchor, &ga);
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, g: &[F]) {
    match &mut grads[v.0] {
        Some(acc) => axpy(F::one(), g, acc),
        slot => *slot = Some(g.to_vec()),
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn params(d: usize) -> TensorSet<f64> {
        let m = |r: usize, c: usize, s: f64| {
            Matrix::from_vec(r, c, (0..r * c).map(|i| ((i as f64 + s) * 0.37).sin()).collect())
        };
        TensorSet::from_tensors(vec![
            m(3, d, 0.1),
            m(3, d, 0.2),
            m(2, d, 0.3),
            m(2, d, 0.4),
            m(4, d, 0.5),
            m(3, d, 0.6),
            m(d, d, 0.7),
        ])
    }

    /// A scalar function touching every op, as a function of the parameters.
    fn build(t: &mut Tape<'_, f64>) -> Var {
        let e = t.param(TensorId::Entities(crate::kg::Side::Left), 1);
        let f = t.param(TensorId::Entities(crate::kg::Side::Right), 2);
        let r = t.param(TensorId::Relations(crate::kg::Side::Left), 0);
        let ru = t.normalize(r);
        let h = t.mul(e, f);
        let refl = t.reflect(ru, h);
        let p = t.project(TensorId::Projection, vec![0.3, -1.2, 0.0, 0.8]);
        let w = t.mat_vec(TensorId::EdgeScore, p);
        let s = t.sum(&[refl, w, e]);
        let l = t.leaky_relu(s, 0.01);
        let a = t.param(TensorId::Attention, 0);
        let d1 = t.dot(a, l);
        let d2 = t.dot(l, f);
        let sm = t.softmax(&[d1, d2]);
        let v = t.scale_by(sm[0], l);
        let v = t.sub(v, f);
        let v = t.scale(v, 1.5);
        let q = t.dot(v, v);
        let b = t.bce(d1, true, 1e-7);
        let c = t.bce(d2, false, 1e-7);
        let lse = t.log_sum_exp(&[q, b, c]);
        let nce = t.info_nce(v, f, &[l, e, refl], 2.0);
        let out = t.add(lse, q);
        t.sum(&[out, nce])
    }

    #[test]
    fn tape_matches_finite_differences() {
        let d = 4;
        let base = params(d);
        let mut t = Tape::new(&base);
        let out = build(&mut t);
        let mut grads = TensorSet::zeros_like(&base);
        t.backward(&[(out, vec![1.0])], &mut |id, row, g| grads.add_row(id, row, g));

        let h = 1e-6;
        for id in TensorId::ALL {
            let (rows, cols) = base.get(id).shape();
            for r in 0..rows {
                for c in 0..cols {
                    let eval = |delta: f64| {
                        let mut p = base.clone();
                        p.get_mut(id)[(r, c)] += delta;
                        let mut t = Tape::new(&p);
                        let o = build(&mut t);
                        t.scalar(o)
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let an = grads.get(id)[(r, c)];
                    assert!(
                        (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "{id:?}[{r},{c}]: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_gradients_are_returned() {
        let p = params(2);
        let mut t = Tape::new(&p);
        let x = t.input(vec![1.0, 2.0]);
        let y = t.dot(x, x);
        let g = t.backward(&[(y, vec![1.0])], &mut |_, _, _| {});
        assert_eq!(g[0].as_deref(), Some(&[2.0, 4.0][..]));
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-30.0f64, -1.0, 0.0, 2.5, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
