//! Prints the complete built-in desk-scale configuration as TOML, handy as
//! a starting point for custom experiment configs.
//!
//! ```bash
//! cargo run --release --example dump_config > my_config.toml
//! ```

fn main() {
    print!("{}", kartlab::config::ExperimentConfig::default().to_toml());
}
