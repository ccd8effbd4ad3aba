//! Model extraction for protocol code written in CVM, a straight-line stack
//! machine language.
//!
//! The pipeline runs a CVM program symbolically ([`symexec`]), producing a
//! process in IML ([`iml`]), a small process calculus over bitstring
//! expressions ([`expr`]). The IML process can be executed against a scripted
//! attacker ([`pts`]) and translated to an applied-pi process for ProVerif
//! ([`pitrans`]). Entailment questions arising on the way are answered by a
//! sound but incomplete arithmetic procedure ([`solver`]).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bits;
pub mod cvm;
pub mod eval;
pub mod expr;
pub mod iml;
pub mod ops;
pub mod pitrans;
pub mod pts;
pub mod simplify;
pub mod solver;
pub mod symexec;
pub mod syntax;

pub use bits::{BitString, WordParams};
pub use eval::{eval, Valuation};
pub use expr::{apply_sym, get_len, Expr, PtrBase};
pub use ops::{OpDef, OpSet};
