//! Session service for the grasshap design studio: WebSocket and REST
//! endpoints over a shared session, the block-rate streaming loop, and the
//! command-line front end.

pub mod app;
pub mod cli;
pub mod config;
