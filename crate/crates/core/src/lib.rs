//! Sign-variation tools for ODE systems whose Jacobian keeps the `k = 2`
//! cooperative pattern: sampled certificates, the spectral split at an
//! equilibrium, periodic-orbit classification and a sampled Lyapunov check.
//!
//! ```
//! use coop2::coop::{certify, CertifyOptions};
//! use coop2::models::{equilibrium, goodwin};
//!
//! let model = goodwin(4, vec![0.5; 4], 10).unwrap();
//! let cert = certify(&model, &CertifyOptions { samples: 128, ..Default::default() }).unwrap();
//! assert!(cert.passed);
//! assert_eq!(equilibrium(&model).unwrap().unstable_count, 2);
//! ```

pub mod linalg;
pub mod signvar;
pub mod spectral;
pub mod sampling;
pub mod modeldsl;
pub mod models;
pub mod ode;
pub mod coop;
pub mod orbit;
pub mod lyapunov;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sign-variations.md")]
    mod sign_variations {}
    #[doc = include_str!("../../../book/src/cooperativity.md")]
    mod cooperativity {}
    #[doc = include_str!("../../../book/src/spectral-split.md")]
    mod spectral_split {}
    #[doc = include_str!("../../../book/src/orbits.md")]
    mod orbits {}
    #[doc = include_str!("../../../book/src/lyapunov.md")]
    mod lyapunov {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
