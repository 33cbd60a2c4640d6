//! Compactly supported smoothing kernels.

use std::fmt;

/// A symmetric kernel `K` supported on `[-L, L]`.
///
/// The quartic (biweight) kernel is the default. Other kernels can be built
/// with [`Kernel::new`], which computes the moments numerically.
#[derive(Clone, Copy)]
pub struct Kernel {
    name: &'static str,
    half_width: f64,
    profile: fn(f64) -> f64,
    second_moment: f64,
    roughness: f64,
}

fn quartic_profile(t: f64) -> f64 {
    let s = 1.0 - t * t;
    0.9375 * s * s
}

impl Kernel {
    /// `K(t) = (15/16)(1 - t^2)^2` on `[-1, 1]`.
    pub const QUARTIC: Kernel = Kernel {
        name: "quartic",
        half_width: 1.0,
        profile: quartic_profile,
        second_moment: 1.0 / 7.0,
        roughness: 5.0 / 7.0,
    };

    /// Builds a kernel from a profile evaluated on `[-half_width, half_width]`.
    /// `mu_2(K)` and `R(K) = int K^2` are obtained by composite Simpson
    /// quadrature on 20 000 panels.
    pub fn new(name: &'static str, half_width: f64, profile: fn(f64) -> f64) -> Self {
        assert!(half_width > 0.0 && half_width.is_finite());
        let second_moment = simpson(|t| t * t * profile(t), -half_width, half_width, 20_000);
        let roughness = simpson(|t| profile(t).powi(2), -half_width, half_width, 20_000);
        Kernel {
            name,
            half_width,
            profile,
            second_moment,
            roughness,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Support half-width `L`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// `K(t)`, zero outside `[-L, L]`.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() > self.half_width {
            0.0
        } else {
            (self.profile)(t)
        }
    }

    /// `K_h(t) = K(t / h) / h`.
    #[inline]
    pub fn eval_scaled(&self, t: f64, h: f64) -> f64 {
        self.eval(t / h) / h
    }

    /// `sup K`, attained at the origin for the kernels used here.
    pub fn peak(&self) -> f64 {
        self.eval(0.0)
    }

    /// `mu_2(K) = int t^2 K(t) dt`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// `R(K) = int K(t)^2 dt`.
    pub fn roughness(&self) -> f64 {
        self.roughness
    }

    /// Canonical bandwidth factor `(R(K) / mu_2(K)^2)^(1/5)`. A plug-in
    /// bandwidth for this kernel is `scale * factor * (psi_4 n)^(-1/5)`.
    pub fn canonical_factor(&self) -> f64 {
        (self.roughness / (self.second_moment * self.second_moment)).powf(0.2)
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::QUARTIC
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("half_width", &self.half_width)
            .field("second_moment", &self.second_moment)
            .finish()
    }
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.half_width == other.half_width
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}
