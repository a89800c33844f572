//! Composable finite-size key rates of no-switching CV-QKD over fading
//! free-space channels.

pub mod channel;
pub mod error;
pub mod estimation;
pub mod format;
pub mod gaussian;
pub mod keyrate;
pub mod special;
pub mod strategies;

pub use error::{Error, Result};

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussian.md")]
    mod gaussian {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/keyrate.md")]
    mod keyrate {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
