//! Verify analytic gradients against the central finite-difference oracle,
//! per primitive op and end to end through the denoiser.
//!
//! ```bash
//! cargo run --release -p vesselgen --example gradient_check
//! ```

fn main() -> vesselgen::Result<()> {
    vesselgen::commands::cmd_gradcheck(25)
}
