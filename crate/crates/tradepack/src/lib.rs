//! Detection and statistical characterization of trade packages — large orders
//! split into sequences of smaller transactions — in per-investor transaction
//! streams, together with the price-impact and regression machinery needed to
//! study them.

pub mod clock;
pub mod detect;
pub mod impact;
pub mod ingest;
pub mod pipeline;
pub mod powerlaw;
pub mod profile;
pub mod regress;
pub mod scaling;
pub mod stats;
pub mod synth;

// Run every code snippet in the guide as a doc-test, one module per chapter
// so a failure names its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    pub mod data_model {}
    #[doc = include_str!("../../../book/src/detection.md")]
    pub mod detection {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    pub mod distributions {}
    #[doc = include_str!("../../../book/src/scaling.md")]
    pub mod scaling {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    pub mod profiles {}
    #[doc = include_str!("../../../book/src/impact.md")]
    pub mod impact {}
    #[doc = include_str!("../../../book/src/regressions.md")]
    pub mod regressions {}
    #[doc = include_str!("../../../book/src/synthetic-markets.md")]
    pub mod synthetic_markets {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
}
