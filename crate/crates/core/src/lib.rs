//! Numerical probes for Milnor-type fibrations of real map germs
//! `f: (R^n, 0) -> (R^k, 0)` with non-isolated critical values.

pub mod conic;
pub mod critical;
pub mod error;
pub mod expr;
pub mod fiber;
pub mod flow;
pub mod germ;
pub mod linalg;
pub mod ode;
pub mod par;
pub mod parser;
pub mod regularity;
pub mod report;

pub use error::{Error, Result};
pub use expr::{Expr, Jet, Side};
pub use germ::{builtin_catalog, builtin_ldm, builtin_psi, Family, MapGerm, Smoothness};
pub use par::Exec;
