//! Complex tensors as pairs of real tape values.

use super::Var;

/// `re + j·im`, both parts sharing one shape (or broadcastable shapes).
#[derive(Debug, Clone, Copy)]
pub struct CVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> CVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Self {
        CVar { re, im }
    }

    pub fn add(self, o: CVar<'t>) -> CVar<'t> {
        CVar::new(self.re + o.re, self.im + o.im)
    }

    pub fn sub(self, o: CVar<'t>) -> CVar<'t> {
        CVar::new(self.re - o.re, self.im - o.im)
    }

    /// Complex (Hadamard) product.
    pub fn cmul(self, o: CVar<'t>) -> CVar<'t> {
        CVar::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    /// Product with a real tensor.
    pub fn mul_real(self, r: Var<'t>) -> CVar<'t> {
        CVar::new(self.re * r, self.im * r)
    }

    pub fn scale(self, c: f64) -> CVar<'t> {
        CVar::new(self.re.scale(c), self.im.scale(c))
    }

    pub fn conj(self) -> CVar<'t> {
        CVar::new(self.re, -self.im)
    }

    /// `|z|²`.
    pub fn abs2(self) -> Var<'t> {
        self.re.square() + self.im.square()
    }

    pub fn sum_axis(self, axis: usize) -> CVar<'t> {
        CVar::new(self.re.sum_axis(axis), self.im.sum_axis(axis))
    }

    /// Batched complex `op(a) · op(b)`; the flags transpose without
    /// conjugating.
    pub fn bmm(self, ta: bool, o: CVar<'t>, tb: bool) -> CVar<'t> {
        let rr = self.re.bmm(ta, o.re, tb);
        let ii = self.im.bmm(ta, o.im, tb);
        let ri = self.re.bmm(ta, o.im, tb);
        let ir = self.im.bmm(ta, o.re, tb);
        CVar::new(rr - ii, ri + ir)
    }
}
