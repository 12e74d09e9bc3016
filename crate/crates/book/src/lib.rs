//! Guide chapters, compiled so that their code listings run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/distributions.md")]
pub mod distributions {}

#[doc = include_str!("../../../book/src/stopping_rules.md")]
pub mod stopping_rules {}

#[doc = include_str!("../../../book/src/bandits.md")]
pub mod bandits {}

#[doc = include_str!("../../../book/src/drafting.md")]
pub mod drafting {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
