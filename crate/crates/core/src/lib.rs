//! Table structure recognition toolkit.
//!
//! Structure coding between OTSL and HTML, TEDS scoring, the layout-pointer
//! association losses, span-aware contrastive supervision, a watermark filter
//! and a synthetic corpus generator with oracle features for end-to-end checks.

pub mod codec;
pub mod contrastive;
pub mod corpus;
pub mod filter;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod pointer;
pub mod teds;
