//! Lossless structure coding between OTSL, [`TableGrid`](crate::model::TableGrid)
//! and table HTML.

pub mod html;
pub mod otsl;

pub use html::{grid_to_html, html_to_grid, parse_html, HtmlError, HtmlNode, HtmlTree, NodeKind};
pub use otsl::{
    data_tag_indices, grid_to_otsl, otsl_parse, otsl_to_grid, DataTagIndexSet, OtslError, OtslSequence, OtslToken,
};
