#[path = "../../tests/support/mod.rs"]
mod support;
