pub mod error;
pub mod fem;
pub mod diagnostics;
pub mod experiments;
pub mod linsolve;
pub mod mesh;
pub mod oracle;
pub mod problems;
pub mod sav_stepper;
pub mod selftest;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/saddle.md")]
    mod saddle {}
    #[doc = include_str!("../../../book/src/stepping.md")]
    mod stepping {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
