//! `|x|^p` and `sign(x)|x|^(p-1)` with fast paths for the exponents used in
//! experiments.

#[derive(Debug, Clone, Copy)]
pub(crate) enum Power {
    One,
    ThreeHalves,
    Two,
    Three,
    Four,
    General(f64),
}

impl Power {
    pub fn new(p: f64) -> Self {
        if p == 1.0 {
            Power::One
        } else if p == 1.5 {
            Power::ThreeHalves
        } else if p == 2.0 {
            Power::Two
        } else if p == 3.0 {
            Power::Three
        } else if p == 4.0 {
            Power::Four
        } else {
            Power::General(p)
        }
    }

    /// `|x|^p`
    #[inline]
    pub fn abs_pow(self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            Power::One => a,
            Power::ThreeHalves => a * a.sqrt(),
            Power::Two => a * a,
            Power::Three => a * a * a,
            Power::Four => {
                let s = a * a;
                s * s
            }
            Power::General(p) => a.powf(p),
        }
    }

    /// `sign(x) |x|^(p-1)`, the derivative of `|x|^p / p`.
    #[inline]
    pub fn signed_pow_m1(self, x: f64) -> f64 {
        match self {
            Power::One => x.signum() * (x != 0.0) as u8 as f64,
            Power::ThreeHalves => x.signum() * x.abs().sqrt(),
            Power::Two => x,
            Power::Three => x * x.abs(),
            Power::Four => x * x * x,
            Power::General(p) => {
                if x == 0.0 {
                    0.0
                } else {
                    x.signum() * x.abs().powf(p - 1.0)
                }
            }
        }
    }

    /// `(p-1)|x|^(p-2)`, the derivative of [`Power::signed_pow_m1`]; infinite
    /// at zero when `p < 2`.
    #[inline]
    pub fn second(self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            Power::One => 0.0,
            Power::ThreeHalves => 0.5 / a.sqrt(),
            Power::Two => 1.0,
            Power::Three => 2.0 * a,
            Power::Four => 3.0 * a * a,
            Power::General(p) => (p - 1.0) * a.powf(p - 2.0),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Power::One => 1.0,
            Power::ThreeHalves => 1.5,
            Power::Two => 2.0,
            Power::Three => 3.0,
            Power::Four => 4.0,
            Power::General(p) => p,
        }
    }
}
