use crate::tensor::Tensor;

/// Anything holding learnable tensors.
///
/// `visit` and `visit_mut` must walk the tensors in the same order; that
/// order is also the order in which `bind` methods register tape leaves.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}
