use super::tape::{norm, permute_map, Tape, Var};
use super::{axis_blocks, Tensor};
use crate::error::{Error, Result};

/// Default ε guarding norms in normalization and cosine similarity.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Pointwise functions with registered derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Exp,
    Log,
    Sqrt,
    /// ln(1 + eˣ), evaluated without overflow.
    Softplus,
    Square,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Unary::Square => x * x,
        }
    }
}

pub(crate) enum Op {
    Leaf,
    Add { a: Var, b: Var, b_scalar: bool },
    Sub { a: Var, b: Var, b_scalar: bool },
    Mul { a: Var, b: Var, b_scalar: bool },
    Scale { x: Var, factor: f64 },
    Unary { x: Var, kind: Unary },
    Custom { x: Var, derivative: fn(f64) -> f64 },
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Softmax { x: Var, axis: usize, scale: f64 },
    L2Normalize { x: Var, axis: usize, epsilon: f64, norms: Vec<f64> },
    SpatialMeanPool { x: Var },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    ExpandLast { x: Var, copies: usize },
    SelectLeading { x: Var, index: usize },
    AddBias { x: Var, bias: Var },
    SumAxis { x: Var, axis: usize },
    SumAll { x: Var },
    GatherRows { x: Var, rows: Vec<usize> },
    Cosine { u: Var, v: Var, epsilon: f64 },
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Tape {
    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let b_scalar = sa != sb && self.value(b).len() == 1;
        if sa != sb && !b_scalar {
            return Err(Error::shape(format!("elementwise operands {sa:?} and {sb:?}")));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let pick = |i: usize| if b_scalar { bv[0] } else { bv[i] };
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| match kind {
                Binary::Add => x + pick(i),
                Binary::Sub => x - pick(i),
                Binary::Mul => x * pick(i),
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a, b]);
        let op = match kind {
            Binary::Add => Op::Add { a, b, b_scalar },
            Binary::Sub => Op::Sub { a, b, b_scalar },
            Binary::Mul => Op::Mul { a, b, b_scalar },
        };
        Ok(self.push(value, rg, op))
    }

    /// Elementwise sum. `b` may be a one-element tensor, broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Multiplies by a constant that is not itself differentiated.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let value =
            Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * factor).collect()).expect("same shape");
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::Scale { x, factor })
    }

    /// Adds a constant to every element.
    pub fn add_constant(&mut self, x: Var, c: f64) -> Var {
        let cst = self.constant(Tensor::scalar(c));
        self.add(x, cst).expect("scalar operand broadcasts")
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let xv = self.value(x);
        let value =
            Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| kind.apply(v)).collect()).expect("same shape");
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::Unary { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Unary::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Unary::Sqrt, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }

    /// A caller-defined pointwise function with its derivative.
    ///
    /// Mostly useful for tests of the differentiator itself: a wrong
    /// `derivative` must be caught by [`super::gradcheck`].
    pub fn map_pointwise(&mut self, x: Var, function: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Var {
        let xv = self.value(x);
        let value =
            Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| function(v)).collect()).expect("same shape");
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::Custom { x, derivative })
    }

    /// Product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a_ip = ad[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                let row = &bd[p * n..(p + 1) * n];
                for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += a_ip * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose of rank-{} tensor", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Transpose { x }))
    }

    /// softmax(scale · x) along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize, scale: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        if !scale.is_finite() {
            return Err(Error::argument(format!("softmax scale {scale} is not finite")));
        }
        let d = self.value(x).data();
        let (outer, len, inner) = axis_blocks(&shape, axis);
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| scale * d[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (scale * d[at(a)] - max).exp();
                    out[at(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[at(a)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Softmax { x, axis, scale }))
    }

    /// Divides every slice along `axis` by max(‖slice‖₂, ε).
    pub fn l2_normalize(&mut self, x: Var, axis: usize, epsilon: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("normalize axis {axis} for shape {shape:?}")));
        }
        if epsilon <= 0.0 {
            return Err(Error::argument("normalize epsilon must be positive"));
        }
        let d = self.value(x).data();
        let (outer, len, inner) = axis_blocks(&shape, axis);
        let mut out = vec![0.0; d.len()];
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let n = (0..len).map(|a| d[at(a)] * d[at(a)]).sum::<f64>().sqrt();
                let den = n.max(epsilon);
                for a in 0..len {
                    out[at(a)] = d[at(a)] / den;
                }
                norms.push(n);
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::L2Normalize { x, axis, epsilon, norms }))
    }

    /// Mean over the two spatial axes of an h×w×c map, giving a length-c vector.
    pub fn spatial_mean_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::shape(format!("spatial pooling needs rank 3, got {s:?}")));
        }
        let (locations, c) = (s[0] * s[1], s[2]);
        let d = self.value(x).data();
        let mut out = vec![0.0; c];
        for loc in d.chunks(c) {
            out.iter_mut().zip(loc).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= locations as f64);
        let value = Tensor::new(vec![c], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::SpatialMeanPool { x }))
    }

    /// Joins rank-1 tensors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::argument("concat of an empty list"));
        }
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::shape(format!("concat part has shape {:?}", v.shape())));
            }
            out.extend_from_slice(v.data());
        }
        let value = Tensor::vector(out);
        let rg = self.needs_grad(parts);
        Ok(self.push(value, rg, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Reorders axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if axes.len() != in_shape.len()
            || axes.iter().any(|&a| a >= seen.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape(format!("invalid permutation {axes:?} for {in_shape:?}")));
        }
        let d = self.value(x).data();
        let out = permute_map(&in_shape, axes).into_iter().map(|i| d[i]).collect();
        let value = Tensor::new(axes.iter().map(|&a| in_shape[a]).collect(), out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Permute { x, axes: axes.to_vec() }))
    }

    /// Appends a trailing axis of extent `copies`, repeating each value.
    pub fn expand_last(&mut self, x: Var, copies: usize) -> Result<Var> {
        if copies == 0 {
            return Err(Error::argument("expand to zero copies"));
        }
        let v = self.value(x);
        let mut shape = v.shape().to_vec();
        shape.push(copies);
        let out = v.data().iter().flat_map(|&e| std::iter::repeat_n(e, copies)).collect();
        let value = Tensor::new(shape, out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::ExpandLast { x, copies }))
    }

    /// The `index`-th slice along the leading axis, with that axis removed.
    pub fn select_leading(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() < 2 || index >= s[0] {
            return Err(Error::shape(format!("select {index} from shape {s:?}")));
        }
        let block = v.len() / s[0];
        let value = Tensor::new(s[1..].to_vec(), v.data()[index * block..(index + 1) * block].to_vec())?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::SelectLeading { x, index }))
    }

    /// Adds a length-q bias to every row of a p×q matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape(format!("bias {sb:?} for matrix {sx:?}")));
        }
        let b = self.value(bias).data();
        let q = b.len();
        let out = self.value(x).data().iter().enumerate().map(|(i, v)| v + b[i % q]).collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        let rg = self.needs_grad(&[x, bias]);
        Ok(self.push(value, rg, Op::AddBias { x, bias }))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("sum axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_blocks(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * len + a) * inner + i];
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::SumAxis { x, axis }))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::SumAll { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Picks rows of a matrix, with repetition allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("gather_rows on shape {s:?}")));
        }
        if rows.is_empty() {
            return Err(Error::argument("gather_rows with no rows"));
        }
        let width = s[1];
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= s[0] {
                return Err(Error::shape(format!("row {r} out of range for {s:?}")));
            }
            out.extend_from_slice(&v.data()[r * width..(r + 1) * width]);
        }
        let value = Tensor::new(vec![rows.len(), width], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::GatherRows { x, rows: rows.to_vec() }))
    }

    /// Cosine similarity of two equal-length vectors, each norm guarded by ε.
    pub fn cosine_similarity(&mut self, u: Var, v: Var, epsilon: f64) -> Result<Var> {
        let (su, sv) = (self.shape(u), self.shape(v));
        if su.len() != 1 || su != sv {
            return Err(Error::shape(format!("cosine of {su:?} and {sv:?}")));
        }
        if epsilon <= 0.0 {
            return Err(Error::argument("cosine epsilon must be positive"));
        }
        let (ud, vd) = (self.value(u).data(), self.value(v).data());
        let dot: f64 = ud.iter().zip(vd).map(|(a, b)| a * b).sum();
        let c = dot / (norm(ud).max(epsilon) * norm(vd).max(epsilon));
        let rg = self.needs_grad(&[u, v]);
        Ok(self.push(Tensor::scalar(c), rg, Op::Cosine { u, v, epsilon }))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let width =
            rows.first().map(|&r| self.value(r).len()).ok_or_else(|| Error::argument("stack of an empty list"))?;
        let flat = self.concat(rows)?;
        if self.value(flat).len() != width * rows.len() {
            return Err(Error::shape("stacked rows differ in length"));
        }
        self.reshape(flat, &[rows.len(), width])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(t: &mut Tape, data: &[f64]) -> Var {
        t.param(Tensor::vector(data.to_vec()))
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let a = v(&mut t, &[1.0, 2.0]);
        let b = v(&mut t, &[3.0, 4.0]);
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);

        let zero = t.constant(Tensor::scalar(0.0));
        let z = t.mul(a, zero).unwrap();
        assert_eq!(t.value(z).data(), &[0.0, 0.0]);

        let r = v(&mut t, &[-1.0, 2.0]);
        let rr = t.relu(r);
        assert_eq!(t.value(rr).data(), &[0.0, 2.0]);

        let c = v(&mut t, &[1.0, 2.0, 3.0]);
        assert!(matches!(t.add(a, c), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let m = t.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = t.matmul(i, m).unwrap();
        assert_eq!(t.value(p), t.value(m));

        let row = t.constant(Tensor::matrix(&[vec![1.0, 2.0]]).unwrap());
        let col = t.constant(Tensor::matrix(&[vec![3.0], vec![4.0]]).unwrap());
        let d = t.matmul(row, col).unwrap();
        assert_eq!(t.value(d).data(), &[11.0]);
        assert!(t.matmul(row, row).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let eq = t.constant(Tensor::full(&[5], 0.3));
        let s = t.softmax(eq, 0, 1.0).unwrap();
        for &p in t.value(s).data() {
            assert!((p - 0.2).abs() < 1e-15);
        }

        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let s = t.softmax(x, 0, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((t.value(s).data()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((t.value(s).data()[0] - 0.7311).abs() < 1e-4);
        assert!((t.value(s).data()[1] - 0.2689).abs() < 1e-4);

        let hard = t.softmax(x, 0, 100.0).unwrap();
        assert!((t.value(hard).data()[0] - 1.0).abs() < 1e-3);
        assert!(t.value(hard).data()[1].abs() < 1e-3);

        assert!(t.softmax(x, 1, 1.0).is_err());
    }

    #[test]
    fn softmax_middle_axis_sums_to_one() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3, 4], (0..24).map(|i| (i as f64).sin() * 3.0).collect()).unwrap());
        let s = t.softmax(x, 1, 2.5).unwrap();
        let out = t.value(s);
        for o in 0..2 {
            for i in 0..4 {
                let total: f64 = (0..3).map(|a| out.get(&[o, a, i])).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l2_normalize_examples() {
        let mut t = Tape::new();
        let x = v(&mut t, &[3.0, 4.0]);
        let n = t.l2_normalize(x, 0, DEFAULT_EPSILON).unwrap();
        assert!(t.value(n).max_abs_diff(&Tensor::vector(vec![0.6, 0.8])) < 1e-15);
        let again = t.l2_normalize(n, 0, DEFAULT_EPSILON).unwrap();
        assert!(t.value(again).max_abs_diff(t.value(n)) < 1e-15);
        let z = v(&mut t, &[0.0, 0.0]);
        let zn = t.l2_normalize(z, 0, DEFAULT_EPSILON).unwrap();
        assert_eq!(t.value(zn).data(), &[0.0, 0.0]);
    }

    #[test]
    fn spatial_mean_pool_examples() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::full(&[3, 2, 4], 1.5));
        let p = t.spatial_mean_pool(c).unwrap();
        assert_eq!(t.value(p).data(), &[1.5; 4]);

        let one = t.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let p = t.spatial_mean_pool(one).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0]);

        let m = t.constant(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = t.spatial_mean_pool(m).unwrap();
        assert_eq!(t.value(p).data(), &[2.5]);
        let bad = t.constant(Tensor::vector(vec![1.0]));
        assert!(t.spatial_mean_pool(bad).is_err());
    }

    #[test]
    fn concat_examples() {
        let mut t = Tape::new();
        let a = v(&mut t, &[1.0]);
        let b = v(&mut t, &[2.0]);
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0]);
        let single = t.concat(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        assert!(matches!(t.concat(&[]), Err(Error::Argument(_))));

        let parts: Vec<Var> = (0..4)
            .map(|i| {
                let x = v(&mut t, &[i as f64 + 1.0, -2.0, 0.5]);
                t.l2_normalize(x, 0, DEFAULT_EPSILON).unwrap()
            })
            .collect();
        let joined = t.concat(&parts).unwrap();
        assert!((t.value(joined).norm() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_examples() {
        let mut t = Tape::new();
        let u = v(&mut t, &[1.0, -2.0, 0.5]);
        let same = t.cosine_similarity(u, u, DEFAULT_EPSILON).unwrap();
        assert!((t.value(same).item() - 1.0).abs() < 1e-12);
        let e1 = v(&mut t, &[1.0, 0.0]);
        let e2 = v(&mut t, &[0.0, 3.0]);
        let orth = t.cosine_similarity(e1, e2, DEFAULT_EPSILON).unwrap();
        assert_eq!(t.value(orth).item(), 0.0);
        let u5 = t.scale(u, 5.0);
        let scaled = t.cosine_similarity(u, u5, DEFAULT_EPSILON).unwrap();
        assert!((t.value(scaled).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permute_round_trip() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let p = t.permute(x, &[1, 0, 2]).unwrap();
        assert_eq!(t.shape(p), &[3, 2, 4]);
        assert_eq!(t.value(p).get(&[2, 1, 3]), t.value(x).get(&[1, 2, 3]));
        let back = t.permute(p, &[1, 0, 2]).unwrap();
        assert_eq!(t.value(back), t.value(x));
        assert!(t.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn backward_on_quadratic() {
        let mut t = Tape::new();
        let x = v(&mut t, &[1.0, 2.0]);
        let sq = t.mul(x, x).unwrap();
        let f = t.sum(sq);
        t.backward(f).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
        assert!(t.backward(sq).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = v(&mut t, &[1.0, 2.0]);
        let c = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = t.mul(x, c).unwrap();
        let f = t.sum(p);
        t.backward(f).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap().data(), &[3.0, 4.0]);
    }
}
