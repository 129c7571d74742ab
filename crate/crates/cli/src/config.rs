pub mod config {}
