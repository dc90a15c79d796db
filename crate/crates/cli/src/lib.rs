//! Command line front end and HTTP service for `propsearch`.

pub mod service;
