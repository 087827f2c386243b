//! Front ends for `apprentice-core`: the offline pipeline commands and the
//! HTTP service the chat client talks to.

pub mod commands;
pub mod http;
