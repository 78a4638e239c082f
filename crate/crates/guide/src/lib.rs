//! The book under `book/src`, compiled as doc-tests so every snippet in it
//! keeps building and passing. mdbook cannot run snippets that need crates
//! from this workspace, so each chapter is pulled in as a module doc instead.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/coding-trees.md")]
pub mod coding_trees {}
#[doc = include_str!("../../../book/src/encoders.md")]
pub mod encoders {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
