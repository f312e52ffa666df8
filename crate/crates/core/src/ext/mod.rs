//! Built-in tools: documentation search, web search, code execution and a
//! simulated microscope.

pub mod coderun;
pub mod docs;
pub mod microscope;
pub mod websearch;
