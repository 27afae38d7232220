use std::cell::{Cell, RefCell};
use std::rc::Rc;

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};

use super::params::ParamStore;

type Data = Rc<ArrayD<f64>>;
type BackFn = Box<dyn Fn(&ArrayD<f64>, &mut Vec<Option<ArrayD<f64>>>)>;

struct Node {
    data: Data,
    back: Option<BackFn>,
    /// (store tag, parameter index) for leased parameters.
    param: Option<(u32, usize)>,
}

/// Records one forward computation; `backward` replays it in reverse.
/// With recording disabled the same ops run as plain inference.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

/// A value on a tape.
#[derive(Clone, Copy)]
pub struct Var {
    id: usize,
}

/// Gradients of one scalar output with respect to tape leaves.
pub struct Gradients {
    by_var: Vec<Option<ArrayD<f64>>>,
    /// ((store tag, param index), gradient) in ascending order.
    pub by_param: Vec<((u32, usize), ArrayD<f64>)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.by_var.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradients belonging to one store, as (index, grad) pairs.
    pub fn for_store(&self, tag: u32) -> Vec<(usize, ArrayD<f64>)> {
        self.by_param
            .iter()
            .filter(|((t, _), _)| *t == tag)
            .map(|((_, i), g)| (*i, g.clone()))
            .collect()
    }
}

fn acc(grads: &mut Vec<Option<ArrayD<f64>>>, id: usize, g: ArrayD<f64>) {
    match &mut grads[id] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// Inference-only tape: ops compute values but record no backward work.
    pub fn inference() -> Self {
        let t = Tape::new();
        t.recording.set(false);
        t
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    fn push(&self, data: ArrayD<f64>, back: Option<BackFn>, param: Option<(u32, usize)>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let back = if self.recording.get() { back } else { None };
        nodes.push(Node {
            data: Rc::new(data),
            back,
            param,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    pub fn data(&self, v: Var) -> Data {
        self.nodes.borrow()[v.id].data.clone()
    }

    /// Scalar value of a 0-d (or single-element) var.
    pub fn value(&self, v: Var) -> f64 {
        let d = self.data(v);
        debug_assert_eq!(d.len(), 1);
        *d.iter().next().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    // ---- leaves ----

    pub fn leaf(&self, data: ArrayD<f64>) -> Var {
        self.push(data, None, None)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Lease a parameter onto the tape; its gradient is reported under the
    /// store tag and index after `backward`.
    pub fn param(&self, store: &ParamStore, idx: usize) -> Var {
        self.push(store.value(idx).clone(), None, Some((store.tag(), idx)))
    }

    /// Value copy severed from the graph.
    pub fn detach(&self, v: Var) -> Var {
        self.leaf((*self.data(v)).clone())
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (da, db) = (self.data(a), self.data(b));
        debug_assert_eq!(da.shape(), db.shape());
        let out = &*da + &*db;
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                acc(grads, a.id, g.clone());
                acc(grads, b.id, g.clone());
            })),
            None,
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (da, db) = (self.data(a), self.data(b));
        debug_assert_eq!(da.shape(), db.shape());
        let out = &*da - &*db;
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                acc(grads, a.id, g.clone());
                acc(grads, b.id, g.mapv(|x| -x));
            })),
            None,
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (da, db) = (self.data(a), self.data(b));
        debug_assert_eq!(da.shape(), db.shape());
        let out = &*da * &*db;
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                acc(grads, a.id, g * &*db);
                acc(grads, b.id, g * &*da);
            })),
            None,
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let da = self.data(a);
        self.push(
            da.mapv(|x| x * c),
            Some(Box::new(move |g, grads| {
                acc(grads, a.id, g.mapv(|x| x * c));
            })),
            None,
        )
    }

    /// Multiply a tensor by a 0-d scalar variable.
    pub fn mul_svar(&self, a: Var, s: Var) -> Var {
        let da = self.data(a);
        let ds = self.data(s);
        debug_assert_eq!(ds.len(), 1);
        let sv = *ds.iter().next().unwrap();
        self.push(
            da.mapv(|x| x * sv),
            Some(Box::new(move |g, grads| {
                acc(grads, a.id, g.mapv(|x| x * sv));
                let dot: f64 = g.iter().zip(da.iter()).map(|(x, y)| x * y).sum();
                acc(grads, s.id, ArrayD::from_elem(IxDyn(&[]), dot));
            })),
            None,
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let da = self.data(a);
        let out = da.mapv(|x| x.max(0.0));
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let mut gx = g.clone();
                for (gi, &xi) in gx.iter_mut().zip(da.iter()) {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                acc(grads, a.id, gx);
            })),
            None,
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let da = self.data(a);
        let out = da.mapv(f64::tanh);
        let saved = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let gx = g * &saved.mapv(|y| 1.0 - y * y);
                acc(grads, a.id, gx);
            })),
            None,
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let da = self.data(a);
        let out = da.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let saved = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let gx = g * &saved.mapv(|y| y * (1.0 - y));
                acc(grads, a.id, gx);
            })),
            None,
        )
    }

    // ---- shape / reduction ----

    pub fn sum_all(&self, a: Var) -> Var {
        let da = self.data(a);
        let s: f64 = da.iter().sum();
        self.push(
            ArrayD::from_elem(IxDyn(&[]), s),
            Some(Box::new(move |g, grads| {
                let gv = *g.iter().next().unwrap();
                acc(grads, a.id, ArrayD::from_elem(da.raw_dim(), gv));
            })),
            None,
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.data(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Fixed-weight inner product with a constant vector (same shape).
    pub fn dot_const(&self, a: Var, w: &ArrayD<f64>) -> Var {
        let da = self.data(a);
        debug_assert_eq!(da.shape(), w.shape());
        let s: f64 = da.iter().zip(w.iter()).map(|(x, y)| x * y).sum();
        let w = w.clone();
        self.push(
            ArrayD::from_elem(IxDyn(&[]), s),
            Some(Box::new(move |g, grads| {
                let gv = *g.iter().next().unwrap();
                acc(grads, a.id, w.mapv(|x| x * gv));
            })),
            None,
        )
    }

    /// Pick one element of a 1-d var as a 0-d var.
    pub fn pick(&self, a: Var, i: usize) -> Var {
        let da = self.data(a);
        debug_assert_eq!(da.ndim(), 1);
        let v = da[[i]];
        let dim = da.raw_dim();
        self.push(
            ArrayD::from_elem(IxDyn(&[]), v),
            Some(Box::new(move |g, grads| {
                let gv = *g.iter().next().unwrap();
                let mut gx = ArrayD::zeros(dim.clone());
                gx[[i]] = gv;
                acc(grads, a.id, gx);
            })),
            None,
        )
    }

    /// Per-row element selection: y[b] = x[b, idx[b]].
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Var {
        let dx = self.data(x);
        debug_assert_eq!(dx.ndim(), 2);
        let (b, a) = (dx.shape()[0], dx.shape()[1]);
        debug_assert_eq!(idx.len(), b);
        let mut out = ArrayD::zeros(IxDyn(&[b]));
        for (r, &i) in idx.iter().enumerate() {
            debug_assert!(i < a);
            out[[r]] = dx[[r, i]];
        }
        let idx = idx.to_vec();
        let dim = dx.raw_dim();
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let mut gx = ArrayD::zeros(dim.clone());
                for (r, &i) in idx.iter().enumerate() {
                    gx[[r, i]] = g[[r]];
                }
                acc(grads, x.id, gx);
            })),
            None,
        )
    }

    /// Softmax over a 1-d vector.
    pub fn softmax1d(&self, a: Var) -> Var {
        let da = self.data(a);
        debug_assert_eq!(da.ndim(), 1);
        let max = da.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = da.mapv(|x| (x - max).exp());
        let sum: f64 = exps.iter().sum();
        let out = exps.mapv(|x| x / sum);
        let saved = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let dot: f64 = g.iter().zip(saved.iter()).map(|(x, y)| x * y).sum();
                let gx = ndarray::Zip::from(&*saved)
                    .and(g)
                    .map_collect(|&y, &gi| y * (gi - dot));
                acc(grads, a.id, gx);
            })),
            None,
        )
    }

    // ---- linear algebra ----

    /// [M,K] × [K,N] matrix product.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let da = self.data(a);
        let db = self.data(b);
        debug_assert_eq!(da.ndim(), 2);
        debug_assert_eq!(db.ndim(), 2);
        let a2 = da.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b2 = db.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let out = a2.dot(&b2).into_dyn();
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let a2 = da.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let b2 = db.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                acc(grads, a.id, g2.dot(&b2.t()).into_dyn());
                acc(grads, b.id, a2.t().dot(&g2).into_dyn());
            })),
            None,
        )
    }

    /// x[B,I]·w[I,O] + bias[O].
    pub fn linear(&self, x: Var, w: Var, bias: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row_bias(y, bias)
    }

    /// Add a [O] bias to every row of [B,O].
    pub fn add_row_bias(&self, x: Var, bias: Var) -> Var {
        let dx = self.data(x);
        let db = self.data(bias);
        debug_assert_eq!(dx.ndim(), 2);
        debug_assert_eq!(db.ndim(), 1);
        debug_assert_eq!(dx.shape()[1], db.shape()[0]);
        let mut out = (*dx).clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (o, bval) in row.iter_mut().zip(db.iter()) {
                *o += bval;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                acc(grads, x.id, g.clone());
                let gb = g.sum_axis(Axis(0));
                acc(grads, bias.id, gb);
            })),
            None,
        )
    }

    // ---- backward ----

    /// Backpropagate from a scalar var; panics when recording was off.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert!(
            self.recording.get(),
            "backward on an inference tape is meaningless"
        );
        let nodes = self.nodes.borrow();
        let mut by_var: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        debug_assert_eq!(nodes[loss.id].data.len(), 1);
        by_var[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].data.raw_dim(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = by_var[id].take() else { continue };
            if let Some(back) = &nodes[id].back {
                back(&g, &mut by_var);
            }
            by_var[id] = Some(g);
        }
        let mut by_param = Vec::new();
        for (id, node) in nodes.iter().enumerate() {
            if let (Some(p), Some(g)) = (node.param, &by_var[id]) {
                by_param.push((p, g.clone()));
            }
        }
        // Multiple leases of the same param accumulate.
        by_param.sort_by_key(|(p, _)| *p);
        let mut merged: Vec<((u32, usize), ArrayD<f64>)> = Vec::with_capacity(by_param.len());
        for (p, g) in by_param {
            match merged.last_mut() {
                Some((lp, lg)) if *lp == p => *lg += &g,
                _ => merged.push((p, g)),
            }
        }
        Gradients {
            by_var,
            by_param: merged,
        }
    }

    pub(crate) fn push_node(
        &self,
        data: ArrayD<f64>,
        back: Option<BackFn>,
    ) -> Var {
        self.push(data, back, None)
    }

    pub(crate) fn view(&self, v: Var) -> Data {
        self.data(v)
    }
}

/// Convenience: id accessor used by conv ops in this module.
impl Var {
    pub(crate) fn id(&self) -> usize {
        self.id
    }
}

pub(crate) fn accumulate(grads: &mut Vec<Option<ArrayD<f64>>>, id: usize, g: ArrayD<f64>) {
    acc(grads, id, g);
}

#[allow(dead_code)]
fn debug_shape(v: ArrayViewD<f64>) -> Vec<usize> {
    v.shape().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of f at x, elementwise.
    pub(crate) fn finite_diff(
        x: &ArrayD<f64>,
        mut f: impl FnMut(&ArrayD<f64>) -> f64,
    ) -> ArrayD<f64> {
        let eps = 1e-6;
        let mut g = ArrayD::zeros(x.raw_dim());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let orig = xp.as_slice_mut().unwrap()[i];
            xp.as_slice_mut().unwrap()[i] = orig + eps;
            let fp = f(&xp);
            xp.as_slice_mut().unwrap()[i] = orig - eps;
            let fm = f(&xp);
            xp.as_slice_mut().unwrap()[i] = orig;
            g.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    fn check_unary(
        shape: &[usize],
        apply: impl Fn(&Tape, Var) -> Var,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_arr(shape, &mut rng);
        let w = rand_arr(shape, &mut rng);
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = apply(&tape, xv);
        // Random linear functional makes the loss scalar.
        let wflat = ArrayD::from_shape_vec(
            tape.data(y).raw_dim(),
            w.iter()
                .cloned()
                .cycle()
                .take(tape.data(y).len())
                .collect(),
        )
        .unwrap();
        let loss = tape.dot_const(y, &wflat);
        let grads = tape.backward(loss);
        let analytic = grads.wrt(xv).unwrap();
        let numeric = finite_diff(&x, |xp| {
            let t = Tape::new();
            let xv = t.leaf(xp.clone());
            let y = apply(&t, xv);
            let l = t.dot_const(y, &wflat);
            t.value(l)
        });
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert_abs_diff_eq!(a, n, epsilon = 1e-6);
        }
    }

    #[test]
    fn elementwise_gradients_match_fd() {
        check_unary(&[3, 4], |t, x| t.relu(x), 1);
        check_unary(&[3, 4], |t, x| t.tanh(x), 2);
        check_unary(&[5], |t, x| t.sigmoid(x), 3);
        check_unary(&[2, 3], |t, x| t.scale(x, -1.7), 4);
        check_unary(&[7], |t, x| t.softmax1d(x), 5);
        check_unary(&[4], |t, x| {
            let y = t.mul(x, x);
            t.add(y, x)
        }, 6);
    }

    #[test]
    fn matmul_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_arr(&[3, 4], &mut rng);
        let b = rand_arr(&[4, 2], &mut rng);
        let w = rand_arr(&[3, 2], &mut rng);
        let run = |av: &ArrayD<f64>, bv: &ArrayD<f64>| -> f64 {
            let t = Tape::new();
            let x = t.leaf(av.clone());
            let y = t.leaf(bv.clone());
            let z = t.matmul(x, y);
            t.value(t.dot_const(z, &w))
        };
        let t = Tape::new();
        let x = t.leaf(a.clone());
        let y = t.leaf(b.clone());
        let z = t.matmul(x, y);
        let loss = t.dot_const(z, &w);
        let g = t.backward(loss);
        let ga = finite_diff(&a, |ap| run(ap, &b));
        let gb = finite_diff(&b, |bp| run(&a, bp));
        for (x, y) in g.wrt(x).unwrap().iter().zip(ga.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
        for (x, y) in g.wrt(y).unwrap().iter().zip(gb.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn gather_and_pick_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_arr(&[4, 5], &mut rng);
        let idx = vec![1usize, 0, 4, 2];
        let w = rand_arr(&[4], &mut rng);
        let t = Tape::new();
        let xv = t.leaf(x.clone());
        let y = t.gather_rows(xv, &idx);
        let loss = t.dot_const(y, &w);
        let g = t.backward(loss);
        let num = finite_diff(&x, |xp| {
            let t = Tape::new();
            let xv = t.leaf(xp.clone());
            let y = t.gather_rows(xv, &idx);
            t.value(t.dot_const(y, &w))
        });
        for (a, n) in g.wrt(xv).unwrap().iter().zip(num.iter()) {
            assert_abs_diff_eq!(a, n, epsilon = 1e-6);
        }
    }

    #[test]
    fn mul_svar_routes_gradient_to_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_arr(&[3, 3], &mut rng);
        let t = Tape::new();
        let xv = t.leaf(x.clone());
        let s = t.scalar(0.7);
        let y = t.mul_svar(xv, s);
        let loss = t.sum_all(y);
        let g = t.backward(loss);
        let expect: f64 = x.iter().sum();
        assert_abs_diff_eq!(
            *g.wrt(s).unwrap().iter().next().unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn inference_tape_skips_backward_closures() {
        let t = Tape::inference();
        let x = t.leaf(ArrayD::from_elem(IxDyn(&[2, 2]), 1.5));
        let y = t.relu(x);
        assert_eq!(t.data(y).len(), 4);
        assert!(!t.is_recording());
    }

    #[test]
    fn param_gradients_merge_across_leases() {
        let mut store = ParamStore::new();
        let idx = store.add("w", ArrayD::from_elem(IxDyn(&[2]), 3.0)).unwrap();
        let t = Tape::new();
        let w1 = t.param(&store, idx);
        let w2 = t.param(&store, idx);
        let y = t.mul(w1, w2); // y = w ⊙ w per element
        let loss = t.sum_all(y);
        let g = t.backward(loss);
        assert_eq!(g.by_param.len(), 1);
        let ((tag, p), gw) = &g.by_param[0];
        assert_eq!((*tag, *p), (store.tag(), idx));
        for v in gw.iter() {
            assert_abs_diff_eq!(*v, 6.0, epsilon = 1e-12);
        }
    }
}
