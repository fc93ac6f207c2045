//! The book's listings, one module per chapter, checked by `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
#[doc = include_str!("../../../book/src/ledger.md")]
pub mod ledger {}
#[doc = include_str!("../../../book/src/pricing.md")]
pub mod pricing {}
#[doc = include_str!("../../../book/src/escrow.md")]
pub mod escrow {}
#[doc = include_str!("../../../book/src/epidemic.md")]
pub mod epidemic {}
#[doc = include_str!("../../../book/src/positioning.md")]
pub mod positioning {}
#[doc = include_str!("../../../book/src/sensing.md")]
pub mod sensing {}
#[doc = include_str!("../../../book/src/bus.md")]
pub mod bus {}
#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
