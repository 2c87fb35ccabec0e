pub mod format;
pub mod gee;
pub mod inference;
pub mod pk_model;
pub mod sim;
pub mod special;
pub mod scan;
pub mod cli;
